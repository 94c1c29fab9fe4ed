#include "semid/bench.hpp"
#include "semid/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace semid;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kSolver = 4 };

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") std::cout << text;
    else write_atomic(out, text);
}

int cmd_generate(const std::string& system, Index n, std::uint64_t seed, const std::string& noise_kind,
                 double noise_amp, const std::string& plant, const std::string& input, double input_amplitude,
                 const std::vector<double>& theta, Index stair_length, const std::string& out) {
    NoiseSpec noise{parse_noise_kind(noise_kind), Vector::Constant(1, noise_amp), std::nullopt, false, Vector::Zero(1)};
    noise.validate();
    Dataset d;
    if (system == "lti") {
        if (theta.size() != 2) throw ConfigError("--theta: need two values");
        const Vector th = Eigen::Map<const Vector>(theta.data(), 2);
        d = add_noise(gen_lti(th, {parse_input_kind(input), input_amplitude, stair_length}, n, seed), noise, seed);
    } else if (system == "wh") {
        d = add_noise(gen_wh_mimo(n, seed, stair_length), noise, seed);
    } else {
        d = gen_maglev(n, seed, noise, parse_maglev_plant(plant));
    }
    std::ostringstream os;
    csv::write(os, d);
    emit(out, os.str());
    return kOk;
}

int cmd_fit(const std::string& config_path, const std::string& out) {
    ExperimentConfig c = load_config(config_path);
    if (!out.empty()) c.directory = out;
    c.directory = std::filesystem::absolute(c.directory).lexically_normal().string();
    const auto fits = run_experiment(c);
    write_artifacts(c.directory, c, fits);
    bool failed = false;
    for (const auto& f : fits) {
        std::cerr << f.method << " seed " << f.seed << ": " << f.status << " after " << f.iterations << " iterations";
        if (!f.message.empty()) std::cerr << " (" << f.message << ")";
        std::cerr << "\n";
        failed = failed || f.failed;
    }
    std::cerr << "wrote " << c.directory << "\n";
    return failed ? kSolver : kOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& theta_path, const std::string& data_path,
                 const std::string& method, const std::vector<std::uint64_t>& seeds, const std::string& init_mode,
                 const std::string& out) {
    const ExperimentConfig c = load_config(config_path);
    const Dataset data = csv::read_file(data_path);
    const Index q = data.n_inputs(), p = data.n_outputs();
    const ModelHandle model = make_model(c, q, p, data.sample_period());
    std::ifstream tf(theta_path);
    if (!tf) throw DataError("cannot open theta file '" + theta_path + "'");
    const auto stored = read_theta_csv(tf, model, q, p);

    std::ostringstream os;
    os << "method,seed,channel,rmse,bfr\n";
    bool any = false;
    for (const auto& [key, fit] : stored) {
        if (!method.empty() && key.first != method) continue;
        if (!seeds.empty() && std::find(seeds.begin(), seeds.end(), key.second) == seeds.end()) continue;
        any = true;
        const Dataset scaled = fit.scaling.apply(data);
        RowMatrix init = fit.init;
        if (init_mode == "measured" && model.io) init = scaled.outputs().topRows(model.init_rows());
        const RowMatrix y = simulate_model(model, fit.theta, init, scaled, fit.scaling);
        const Vector r = rmse(y, data.outputs()), b = bfr(y, data.outputs());
        for (Index ch = 0; ch < p; ++ch)
            os << key.first << "," << key.second << ",y" << ch + 1 << "," << csv::format(r(ch), 6) << ","
               << csv::format(b(ch), 6) << "\n";
    }
    if (!any) throw DataError("theta file has no entry for the requested method/seed");
    emit(out, os.str());
    return kOk;
}

int cmd_bench_qr(const std::vector<Index>& sizes, int reps, bool sparse_only, const std::string& out) {
    std::ostringstream os;
    os << "m,n_vars,dense_ms,sparse_ms,flops_pred,flops_meas,speedup\n";
    for (Index N : sizes) {
        const BenchRow r = bench_step(N, reps, 1, !sparse_only);
        os << r.m << "," << r.n_vars << "," << (sparse_only ? "nan" : csv::format(r.dense_ms, 6)) << ","
           << csv::format(r.sparse_ms, 6) << "," << r.flops_pred << "," << r.flops_meas << ","
           << (sparse_only ? "nan" : csv::format(r.speedup(), 6)) << "\n";
        if (out.empty() || out == "-") std::cout << std::flush;
    }
    emit(out, os.str());
    return kOk;
}

int cmd_flops(Index n_theta, Index p, Index phi, Index N, bool measure, const std::string& out) {
    const FlopModel model(n_theta, p, phi, N);
    const FlopPrediction closed = model.closed_form(), summed = model.summed();
    std::ostringstream os;
    os << "source,m,housegen,inner_product,rank1_update,factorization,matvec\n";
    os << "closed_form," << closed.m << "," << closed.housegen << "," << closed.inner_product << ","
       << closed.rank1_update << "," << closed.total() << "," << model.matvec_tabulated() << "\n";
    os << "summed," << summed.m << "," << summed.housegen << "," << summed.inner_product << "," << summed.rank1_update
       << "," << summed.total() << "," << model.matvec_stored() << "\n";
    if (measure) {
        const FlopLedger l = measure_flops(n_theta, p, phi, N);
        os << "measured," << model.m() << "," << l.housegen << "," << l.inner_product << "," << l.rank1_update << ","
           << l.factorization() << "," << model.matvec_stored() << "\n";
    }
    emit(out, os.str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Identification of dynamical models by sparse constrained optimization"};
    app.require_subcommand(1);

    std::string system = "lti", noise_kind = "uniform", plant = "discrete", input = "white", out;
    Index n = 200, stair_length = 100;
    std::uint64_t seed = 1;
    double noise_amp = 0.0, input_amplitude = 1.0;
    std::vector<double> theta{0.5, 1.0};
    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as CSV");
    gen->add_option("--system", system, "lti, wh or maglev")->check(CLI::IsMember({"lti", "wh", "maglev"}));
    gen->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_option("--noise-kind", noise_kind, "uniform or gaussian");
    gen->add_option("--noise-amp", noise_amp, "Uniform half-width or Gaussian standard deviation");
    gen->add_option("--plant", plant, "Maglev plant: discrete or continuous");
    gen->add_option("--input", input, "LTI input: impulse, zero, white or staircase");
    gen->add_option("--input-amplitude", input_amplitude, "LTI input amplitude");
    gen->add_option("--theta", theta, "LTI parameters theta1,theta2")->delimiter(',');
    gen->add_option("--stair-length", stair_length, "Samples per staircase level")->check(CLI::PositiveNumber);
    gen->add_option("--out", out, "Output CSV (default stdout)");

    std::string config, fit_out;
    auto* fit = app.add_subcommand("fit", "Fit a model as described by a config file");
    fit->add_option("--config", config, "Experiment config (INI)")->required();
    fit->add_option("--out", fit_out, "Run directory (overrides [output] directory)");

    std::string theta_path, data_path, method, init_mode = "stored", eval_out;
    std::vector<std::uint64_t> eval_seeds;
    auto* eval = app.add_subcommand("evaluate", "Free-run a fitted model on a dataset");
    eval->add_option("--config", config, "Config the model was fitted with")->required();
    eval->add_option("--theta", theta_path, "theta.csv of a run")->required();
    eval->add_option("--data", data_path, "Dataset CSV")->required();
    eval->add_option("--method", method, "Only this method");
    eval->add_option("--seed", eval_seeds, "Only these seeds")->delimiter(',');
    eval->add_option("--init", init_mode, "Initial outputs: stored (estimated) or measured")
        ->check(CLI::IsMember({"stored", "measured"}));
    eval->add_option("--out", eval_out, "Output CSV (default stdout)");

    std::vector<Index> sizes{1000, 5000};
    int reps = 3;
    bool sparse_only = false;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench-qr", "Time one solver step along the sparse and dense paths");
    bench->add_option("--sizes", sizes, "Sample counts N")->delimiter(',');
    bench->add_option("--reps", reps, "Repetitions per size (median reported)")->check(CLI::PositiveNumber);
    bench->add_flag("--sparse-only", sparse_only, "Skip the dense path");
    bench->add_option("--out", bench_out, "Output CSV (default stdout)");

    Index n_theta = 2, p = 1, phi = 1, N = 100;
    bool measure = false;
    std::string flops_out;
    auto* flops = app.add_subcommand("flops", "Predicted (and measured) factorization FLOPs");
    flops->add_option("--n-theta", n_theta)->required();
    flops->add_option("--p", p)->required();
    flops->add_option("--phi", phi)->required();
    flops->add_option("--N", N)->required();
    flops->add_flag("--measure", measure, "Also factorize a random Jacobian with this pattern");
    flops->add_option("--out", flops_out, "Output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen)
            return cmd_generate(system, n, seed, noise_kind, noise_amp, plant, input, input_amplitude, theta,
                                stair_length, out);
        if (*fit) return cmd_fit(config, fit_out);
        if (*eval) return cmd_evaluate(config, theta_path, data_path, method, eval_seeds, init_mode, eval_out);
        if (*bench) return cmd_bench_qr(sizes, reps, sparse_only, bench_out);
        if (*flops) return cmd_flops(n_theta, p, phi, N, measure, flops_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const InsufficientDataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSolver;
    }
    return kOk;
}
