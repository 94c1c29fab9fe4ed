#pragma once

#include "semid/baselines.hpp"
#include "semid/datagen.hpp"
#include "semid/flcmo.hpp"
#include "semid/metrics.hpp"
#include "semid/models/linear_ss.hpp"
#include "semid/models/lti.hpp"
#include "semid/models/maglev.hpp"
#include "semid/models/mlp.hpp"
#include "semid/problem.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace semid {

/// Resolved experiment description, read from an INI file with sections
/// [model], [data], [solver] and [output].
struct ExperimentConfig {
    std::string model_kind = "lti"; ///< lti | maglev | mlp | linear_ss
    Index order = 1;                ///< dynamical order (mlp) or state dimension (linear_ss)
    std::vector<Index> layers;      ///< mlp hidden widths
    std::string variant = "oe";     ///< oe | eiv | ss
    double ridge = 0.0;

    std::string train_path;
    std::string validation_path;
    std::string generator; ///< lti | wh | maglev when no train path is given
    Index n = 200;
    std::string data_seed = "1"; ///< integer, or "run" to regenerate per run seed
    std::string input = "white";
    double input_amplitude = 1.0;
    Index stair_length = 100;
    std::vector<double> truth{0.5, 1.0};
    std::string noise_kind = "uniform";
    double noise_amp = 0.0;
    std::string plant = "discrete";
    Index validation_n = 0;
    std::uint64_t validation_seed = 1000;
    bool standardize = false;

    std::vector<std::string> methods{"flcmo"};
    SolverConfig flcmo;
    AdamConfig adam;
    std::vector<std::uint64_t> seeds{1};
    int jobs = 1;

    std::string directory = "run";
    std::vector<std::string> formats{"csv", "jsonl"};

    bool wants(const std::string& format) const {
        return std::find(formats.begin(), formats.end(), format) != formats.end();
    }
};

namespace config_detail {

using boost::property_tree::ptree;

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(s);
    while (std::getline(is, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(cell);
    }
    return out;
}

inline std::string key_name(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

inline double to_double(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key_name(section, key) + ": expected a number, got '" + v + "'");
    }
}

inline long long to_integer(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(key_name(section, key) + ": expected an integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key_name(section, key) + ": expected true or false, got '" + v + "'");
}

inline std::string fmt(double v) { return csv::format(v, 17); }

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        if constexpr (std::is_floating_point_v<T>) os << fmt(v[i]);
        else os << v[i];
    }
    return os.str();
}

} // namespace config_detail

inline void validate(const ExperimentConfig& c) {
    using config_detail::key_name;
    static const std::set<std::string> kinds{"lti", "maglev", "mlp", "linear_ss"};
    if (!kinds.count(c.model_kind)) throw ConfigError(key_name("model", "kind") + ": unknown model '" + c.model_kind + "'");
    if (c.order < 1) throw ConfigError(key_name("model", "order") + ": must be at least 1");
    for (Index w : c.layers)
        if (w < 1) throw ConfigError(key_name("model", "layers") + ": widths must be positive");
    auto keyed = [](const char* section, const char* key, auto&& parse) {
        try {
            parse();
        } catch (const ConfigError& e) {
            throw ConfigError(key_name(section, key) + ": " + e.what());
        }
    };
    keyed("model", "variant", [&] { (void)parse_variant(c.variant); });
    if (c.model_kind == "linear_ss" && c.variant != "ss")
        throw ConfigError(key_name("model", "variant") + ": linear_ss requires variant = ss");
    if (c.model_kind != "linear_ss" && c.variant == "ss")
        throw ConfigError(key_name("model", "variant") + ": ss requires kind = linear_ss");
    if (!(c.ridge >= 0.0)) throw ConfigError(key_name("model", "ridge") + ": must be nonnegative");

    if (c.train_path.empty()) {
        static const std::set<std::string> gens{"lti", "wh", "maglev"};
        if (!gens.count(c.generator))
            throw ConfigError(key_name("data", "generator") + ": need 'train' or a generator (lti, wh, maglev)");
        if (c.n < 2) throw ConfigError(key_name("data", "n") + ": must be at least 2");
        if (c.data_seed != "run") (void)config_detail::to_integer("data", "seed", c.data_seed);
        keyed("data", "input", [&] { (void)parse_input_kind(c.input); });
        keyed("data", "noise_kind", [&] { (void)parse_noise_kind(c.noise_kind); });
        keyed("data", "plant", [&] { (void)parse_maglev_plant(c.plant); });
        if (!(c.noise_amp >= 0.0)) throw ConfigError(key_name("data", "noise_amp") + ": must be nonnegative");
        if (c.generator == "lti" && c.truth.size() != 2) throw ConfigError(key_name("data", "theta") + ": need two values");
        if (c.stair_length < 1) throw ConfigError(key_name("data", "stair_length") + ": must be at least 1");
    }
    if (c.validation_n < 0) throw ConfigError(key_name("data", "validation_n") + ": must be nonnegative");

    if (c.methods.empty()) throw ConfigError(key_name("solver", "method") + ": at least one method is required");
    for (const auto& m : c.methods)
        if (m != "flcmo" && m != "adam" && m != "ls")
            throw ConfigError(key_name("solver", "method") + ": unknown method '" + m + "' (flcmo, adam, ls)");
    if (!(c.flcmo.gain > 0.0)) throw ConfigError(key_name("solver", "gain") + ": must be positive");
    if (!(c.flcmo.step > 0.0)) throw ConfigError(key_name("solver", "step") + ": must be positive");
    if (!(c.flcmo.tol_step > 0.0)) throw ConfigError(key_name("solver", "tol_step") + ": must be positive");
    if (!(c.flcmo.tol_constraint > 0.0)) throw ConfigError(key_name("solver", "tol_constraint") + ": must be positive");
    if (c.flcmo.max_iters < 1) throw ConfigError(key_name("solver", "max_iters") + ": must be at least 1");
    if (!(c.adam.lr > 0.0)) throw ConfigError(key_name("solver", "lr") + ": must be positive");
    if (c.adam.epochs < 0) throw ConfigError(key_name("solver", "epochs") + ": must be nonnegative");
    if (c.seeds.empty()) throw ConfigError(key_name("solver", "seeds") + ": at least one seed is required");
    if (c.jobs < 1) throw ConfigError(key_name("solver", "jobs") + ": must be at least 1");

    for (const auto& f : c.formats)
        if (f != "csv" && f != "jsonl") throw ConfigError(key_name("output", "formats") + ": unknown format '" + f + "'");
}

/// Parses INI text. Unknown sections or keys are errors naming the key.
inline ExperimentConfig parse_config(std::istream& is) {
    using namespace config_detail;
    ptree pt;
    try {
        boost::property_tree::ini_parser::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    static const std::map<std::string, std::set<std::string>> allowed{
        {"model", {"kind", "order", "layers", "variant", "ridge"}},
        {"data",
         {"train", "validation", "generator", "n", "seed", "input", "input_amplitude", "stair_length", "theta",
          "noise_kind", "noise_amp", "plant", "validation_n", "validation_seed", "standardize"}},
        {"solver",
         {"method", "gain", "step", "tol_step", "tol_constraint", "max_iters", "dense_fallback", "seeds", "jobs", "lr",
          "epochs", "fit_initial_outputs"}},
        {"output", {"directory", "formats"}}};
    for (const auto& [section, body] : pt) {
        auto it = allowed.find(section);
        if (it == allowed.end()) {
            if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
            throw ConfigError("config: unknown section [" + section + "]");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) throw ConfigError("config: unknown key " + key_name(section, key));
            const std::string v = trim(value.data());
            if (section == "model") {
                if (key == "kind") c.model_kind = v;
                else if (key == "order") c.order = to_integer(section, key, v);
                else if (key == "layers") {
                    c.layers.clear();
                    for (const auto& s : split_list(v)) c.layers.push_back(to_integer(section, key, s));
                } else if (key == "variant") c.variant = v;
                else if (key == "ridge") c.ridge = to_double(section, key, v);
            } else if (section == "data") {
                if (key == "train") c.train_path = v;
                else if (key == "validation") c.validation_path = v;
                else if (key == "generator") c.generator = v;
                else if (key == "n") c.n = to_integer(section, key, v);
                else if (key == "seed") c.data_seed = v;
                else if (key == "input") c.input = v;
                else if (key == "input_amplitude") c.input_amplitude = to_double(section, key, v);
                else if (key == "stair_length") c.stair_length = to_integer(section, key, v);
                else if (key == "theta") {
                    c.truth.clear();
                    for (const auto& s : split_list(v)) c.truth.push_back(to_double(section, key, s));
                } else if (key == "noise_kind") c.noise_kind = v;
                else if (key == "noise_amp") c.noise_amp = to_double(section, key, v);
                else if (key == "plant") c.plant = v;
                else if (key == "validation_n") c.validation_n = to_integer(section, key, v);
                else if (key == "validation_seed") c.validation_seed = static_cast<std::uint64_t>(to_integer(section, key, v));
                else if (key == "standardize") c.standardize = to_bool(section, key, v);
            } else if (section == "solver") {
                if (key == "method") c.methods = split_list(v);
                else if (key == "gain") c.flcmo.gain = to_double(section, key, v);
                else if (key == "step") c.flcmo.step = to_double(section, key, v);
                else if (key == "tol_step") c.flcmo.tol_step = to_double(section, key, v);
                else if (key == "tol_constraint") c.flcmo.tol_constraint = to_double(section, key, v);
                else if (key == "max_iters") c.flcmo.max_iters = static_cast<long>(to_integer(section, key, v));
                else if (key == "dense_fallback") c.flcmo.dense_fallback = to_bool(section, key, v);
                else if (key == "seeds") {
                    c.seeds.clear();
                    for (const auto& s : split_list(v)) {
                        const auto dash = s.find('-', 1);
                        if (dash != std::string::npos) {
                            const long long a = to_integer(section, key, s.substr(0, dash));
                            const long long b = to_integer(section, key, s.substr(dash + 1));
                            if (a > b || a < 0) throw ConfigError(key_name(section, key) + ": bad range '" + s + "'");
                            for (long long x = a; x <= b; ++x) c.seeds.push_back(static_cast<std::uint64_t>(x));
                        } else {
                            const long long x = to_integer(section, key, s);
                            if (x < 0) throw ConfigError(key_name(section, key) + ": seeds must be nonnegative");
                            c.seeds.push_back(static_cast<std::uint64_t>(x));
                        }
                    }
                } else if (key == "jobs") c.jobs = static_cast<int>(to_integer(section, key, v));
                else if (key == "lr") c.adam.lr = to_double(section, key, v);
                else if (key == "epochs") c.adam.epochs = static_cast<long>(to_integer(section, key, v));
                else if (key == "fit_initial_outputs") c.adam.fit_initial_outputs = to_bool(section, key, v);
            } else if (section == "output") {
                if (key == "directory") c.directory = v;
                else if (key == "formats") c.formats = split_list(v);
            }
        }
    }
    validate(c);
    return c;
}

/// Reads a config file; relative data paths are resolved against the
/// file's directory.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config '" + path + "'");
    ExperimentConfig c = parse_config(f);
    const auto base = std::filesystem::absolute(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.train_path);
    resolve(c.validation_path);
    return c;
}

/// Every resolved key, so that a run can be repeated from this text alone.
inline std::string to_ini(const ExperimentConfig& c) {
    using namespace config_detail;
    std::ostringstream os;
    os << "[model]\n"
       << "kind = " << c.model_kind << "\n"
       << "order = " << c.order << "\n"
       << "layers = " << join(c.layers) << "\n"
       << "variant = " << c.variant << "\n"
       << "ridge = " << fmt(c.ridge) << "\n\n";
    os << "[data]\n";
    if (!c.train_path.empty()) os << "train = " << c.train_path << "\n";
    if (!c.validation_path.empty()) os << "validation = " << c.validation_path << "\n";
    if (!c.generator.empty()) os << "generator = " << c.generator << "\n";
    os << "n = " << c.n << "\n"
       << "seed = " << c.data_seed << "\n"
       << "input = " << c.input << "\n"
       << "input_amplitude = " << fmt(c.input_amplitude) << "\n"
       << "stair_length = " << c.stair_length << "\n"
       << "theta = " << join(c.truth) << "\n"
       << "noise_kind = " << c.noise_kind << "\n"
       << "noise_amp = " << fmt(c.noise_amp) << "\n"
       << "plant = " << c.plant << "\n"
       << "validation_n = " << c.validation_n << "\n"
       << "validation_seed = " << c.validation_seed << "\n"
       << "standardize = " << (c.standardize ? "true" : "false") << "\n\n";
    os << "[solver]\n"
       << "method = " << join(c.methods) << "\n"
       << "gain = " << fmt(c.flcmo.gain) << "\n"
       << "step = " << fmt(c.flcmo.step) << "\n"
       << "tol_step = " << fmt(c.flcmo.tol_step) << "\n"
       << "tol_constraint = " << fmt(c.flcmo.tol_constraint) << "\n"
       << "max_iters = " << c.flcmo.max_iters << "\n"
       << "dense_fallback = " << (c.flcmo.dense_fallback ? "true" : "false") << "\n"
       << "seeds = " << join(c.seeds) << "\n"
       << "jobs = " << c.jobs << "\n"
       << "lr = " << fmt(c.adam.lr) << "\n"
       << "epochs = " << c.adam.epochs << "\n"
       << "fit_initial_outputs = " << (c.adam.fit_initial_outputs ? "true" : "false") << "\n\n";
    os << "[output]\n"
       << "directory = " << c.directory << "\n"
       << "formats = " << join(c.formats) << "\n";
    return os.str();
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open '" + tmp.string() + "' for writing");
        f << content;
        if (!f) throw DataError("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

/// Model of either kind built from the config and the data's channel counts.
struct ModelHandle {
    ModelPtr io;
    StateSpaceModelPtr ss;

    Index n_params() const { return io ? io->n_params() : ss->n_params(); }
    /// Rows of the stored initial condition block (n outputs, or one state).
    Index init_rows() const { return io ? io->order() : 1; }
    Index init_cols() const { return io ? io->n_outputs() : ss->state_dim(); }
    Vector initial_params(std::uint64_t seed) const {
        auto rng = make_rng(seed, stream::params);
        return io ? io->initial_params(rng) : ss->initial_params(rng);
    }
};

inline ModelHandle make_model(const ExperimentConfig& c, Index q, Index p, double sample_period) {
    ModelHandle h;
    if (c.model_kind == "lti") {
        if (q != 1 || p != 1) throw DataError("lti model needs one input and one output channel");
        h.io = std::make_shared<LtiFirstOrder>();
    } else if (c.model_kind == "maglev") {
        if (q != 1 || p != 1) throw DataError("maglev model needs one input and one output channel");
        h.io = std::make_shared<MaglevModel>(MaglevModel::kDefaultMass, sample_period);
    } else if (c.model_kind == "mlp") {
        h.io = std::make_shared<MlpModel>(c.order, p, q, c.layers);
    } else {
        h.ss = std::make_shared<LinearStateSpaceModel>(c.order, q, p);
    }
    return h;
}

struct RunData {
    Dataset train;
    std::optional<Dataset> validation;
    std::optional<Vector> truth;
};

/// Training (and validation) data for one run seed. Generated validation
/// sets are noiseless.
inline RunData resolve_data(const ExperimentConfig& c, std::uint64_t run_seed) {
    RunData r;
    const std::uint64_t seed =
        c.data_seed == "run" ? run_seed : static_cast<std::uint64_t>(config_detail::to_integer("data", "seed", c.data_seed));
    NoiseSpec noise{parse_noise_kind(c.noise_kind), Vector::Constant(1, c.noise_amp), std::nullopt, false, Vector::Zero(1)};
    auto generate = [&](Index n, std::uint64_t s, bool noisy) -> Dataset {
        NoiseSpec spec = noise;
        if (!noisy) spec.amplitude.setZero();
        if (c.generator == "lti") {
            Vector th = Eigen::Map<const Vector>(c.truth.data(), static_cast<Index>(c.truth.size()));
            const Dataset d = gen_lti(th, {parse_input_kind(c.input), c.input_amplitude, c.stair_length}, n, s);
            return noisy && c.noise_amp > 0.0 ? add_noise(d, spec, s) : d;
        }
        if (c.generator == "wh") {
            const Dataset d = gen_wh_mimo(n, s, c.stair_length);
            return noisy && c.noise_amp > 0.0 ? add_noise(d, spec, s) : d;
        }
        return gen_maglev(n, s, spec, parse_maglev_plant(c.plant));
    };
    if (!c.train_path.empty()) {
        r.train = csv::read_file(c.train_path);
    } else {
        r.train = generate(c.n, seed, true);
        if (c.generator == "lti") r.truth = Eigen::Map<const Vector>(c.truth.data(), static_cast<Index>(c.truth.size()));
        if (c.generator == "maglev") {
            Vector t(2);
            t << MaglevModel::kTrueKm, MaglevModel::kTrueK0;
            r.truth = t;
        }
    }
    if (!c.validation_path.empty()) r.validation = csv::read_file(c.validation_path);
    else if (c.validation_n > 0 && !c.generator.empty()) r.validation = generate(c.validation_n, c.validation_seed, false);
    if (r.validation && (r.validation->n_inputs() != r.train.n_inputs() || r.validation->n_outputs() != r.train.n_outputs()))
        throw DataError("validation data has different channel counts from the training data");
    return r;
}

/// Outcome of one (method, seed) fit with metrics in original units.
struct FitOutcome {
    std::string method;
    std::uint64_t seed = 0;
    std::string status;
    bool failed = false;
    std::string message;
    long iterations = 0;
    Vector theta;
    RowMatrix init;          ///< estimated initial outputs (or initial state), model units
    ChannelScaling scaling;  ///< data scaling the model was fitted under
    double cost = std::numeric_limits<double>::quiet_NaN();
    double h_inf = std::numeric_limits<double>::quiet_NaN();
    double theta_err = std::numeric_limits<double>::quiet_NaN();
    Vector train_rmse, val_rmse, val_bfr;
    double wall_ms = 0.0;
    std::vector<std::string> trace; ///< JSON lines
};

namespace detail {

inline double round6(double v) { return std::isfinite(v) ? std::stod(csv::format(v, 6)) : v; }

inline nlohmann::json json_number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return round6(v);
}

} // namespace detail

/// Free-run simulation in original units; non-finite output on divergence.
inline RowMatrix simulate_model(const ModelHandle& m, const Vector& theta, const RowMatrix& init, const Dataset& scaled,
                                const ChannelScaling& sc) {
    RowMatrix y;
    try {
        if (m.io) y = simulate_free_run(*m.io, theta, init, scaled.inputs());
        else y = simulate_state_space(*m.ss, theta, init.row(0).transpose(), scaled.inputs());
    } catch (const DivergedSimulationError&) {
        return RowMatrix::Constant(scaled.size(), scaled.n_outputs(), std::numeric_limits<double>::quiet_NaN());
    }
    return sc.restore_outputs(y);
}

inline FitOutcome fit_one(const ExperimentConfig& c, const std::string& method, std::uint64_t seed) {
    FitOutcome o;
    o.method = method;
    o.seed = seed;
    const RunData data = resolve_data(c, seed);
    const Index q = data.train.n_inputs(), p = data.train.n_outputs();
    const ModelHandle model = make_model(c, q, p, data.train.sample_period());
    o.scaling = c.standardize ? fit_standardization(data.train) : ChannelScaling::identity(q, p);
    const Dataset train = o.scaling.apply(data.train);
    const Weighting w = Weighting::identity(p, q, c.ridge);
    const Index nt = model.n_params();
    const auto t0 = std::chrono::steady_clock::now();

    if (method == "flcmo") {
        const Problem pr = model.io ? assemble(model.io, train, w, parse_variant(c.variant)) : assemble(model.ss, train, w);
        const Vector x0 = pr.initial_guess(model.initial_params(seed));
        const SolveResult r = solve(pr, x0, c.flcmo);
        o.status = to_string(r.status);
        o.failed = r.status == SolveStatus::Diverged || r.status == SolveStatus::RankBreakdown;
        o.message = r.message;
        o.iterations = r.iterations;
        o.theta = pr.theta(r.x);
        o.init = pr.trajectory(r.x).topRows(model.init_rows());
        if (!r.trace.empty()) o.cost = r.trace.back().cost;
        o.h_inf = r.x.allFinite() ? inf_norm(pr.constraint_residual(r.x)) : std::numeric_limits<double>::infinity();
        for (const auto& t : r.trace) {
            nlohmann::ordered_json j{{"method", method},
                             {"seed", seed},
                             {"iter", t.iter},
                             {"cost", detail::json_number(t.cost)},
                             {"h_norm", detail::json_number(t.h_norm)},
                             {"dx_norm", detail::json_number(t.dx_norm)},
                             {"factor_ms", detail::json_number(t.factor_ms)},
                             {"flops", t.cumulative_flops}};
            o.trace.push_back(j.dump());
        }
    } else if (method == "adam") {
        if (!model.io) throw ConfigError("[solver] method: adam needs an input-output model");
        const AdamResult r = adam_fit(*model.io, train, w, model.initial_params(seed), c.adam);
        o.status = r.diverged ? "diverged" : "completed";
        o.failed = r.diverged;
        o.message = r.message;
        o.iterations = r.epochs_run;
        o.theta = r.theta;
        o.init = r.init_outputs;
        if (!r.loss_trace.empty()) o.cost = r.loss_trace.back();
        for (std::size_t e = 0; e < r.loss_trace.size(); ++e) {
            nlohmann::ordered_json j{{"method", method}, {"seed", seed}, {"iter", e}, {"cost", detail::json_number(r.loss_trace[e])}};
            o.trace.push_back(j.dump());
        }
    } else {
        if (!model.io) throw ConfigError("[solver] method: ls needs an input-output model");
        try {
            o.theta = pem_ls(*model.io, train);
            o.status = "solved";
        } catch (const RankBreakdownError& e) {
            o.theta = Vector::Constant(nt, std::numeric_limits<double>::quiet_NaN());
            o.status = "rank-breakdown";
            o.failed = true;
            o.message = e.what();
        }
        o.init = train.outputs().topRows(model.init_rows());
    }
    o.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (o.init.rows() != model.init_rows() || o.init.cols() != model.init_cols())
        o.init = RowMatrix::Zero(model.init_rows(), model.init_cols());

    if (data.truth && o.theta.size() == data.truth->size()) o.theta_err = inf_norm(o.theta - *data.truth);
    if (o.theta.allFinite()) {
        o.train_rmse = rmse(simulate_model(model, o.theta, o.init, train, o.scaling), data.train.outputs());
        if (data.validation) {
            const Dataset val = o.scaling.apply(*data.validation);
            const RowMatrix init =
                model.io ? RowMatrix(val.outputs().topRows(model.init_rows())) : o.init;
            const RowMatrix y = simulate_model(model, o.theta, init, val, o.scaling);
            o.val_rmse = rmse(y, data.validation->outputs());
            o.val_bfr = bfr(y, data.validation->outputs());
        }
    } else {
        o.train_rmse = Vector::Constant(p, std::numeric_limits<double>::quiet_NaN());
        if (data.validation) o.val_rmse = o.val_bfr = o.train_rmse;
    }
    return o;
}

/// Runs every (method, seed) pair on a bounded pool of `jobs` threads.
/// Results are ordered by method, then seed, independent of scheduling.
inline std::vector<FitOutcome> run_experiment(const ExperimentConfig& c) {
    validate(c);
    std::vector<std::pair<std::string, std::uint64_t>> tasks;
    for (const auto& m : c.methods)
        for (auto s : c.seeds) tasks.emplace_back(m, s);
    std::vector<FitOutcome> out(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            try {
                out[i] = fit_one(c, tasks[i].first, tasks[i].second);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(c.jobs), tasks.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_workers; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

namespace detail {

inline std::string cell(double v) { return std::isfinite(v) ? csv::format(v, 6) : (std::isnan(v) ? "nan" : "inf"); }

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

} // namespace detail

/// summary.csv: one row per (method, seed), then mean and std rows per
/// method over the numeric columns. Wall time lives in timing.csv.
inline std::string summary_csv(const std::vector<FitOutcome>& fits) {
    if (fits.empty()) return "";
    const Index p = fits.front().train_rmse.size();
    const Index nval = fits.front().val_rmse.size();
    const Index nt = fits.front().theta.size();
    const bool show_theta = nt <= 8;
    std::ostringstream os;
    os << "method,seed,status,iterations,cost,h_inf,theta_err_inf";
    if (show_theta)
        for (Index i = 0; i < nt; ++i) os << ",theta_" << i + 1;
    for (Index i = 0; i < p; ++i) os << ",train_rmse_y" << i + 1;
    for (Index i = 0; i < nval; ++i) os << ",val_rmse_y" << i + 1;
    for (Index i = 0; i < nval; ++i) os << ",val_bfr_y" << i + 1;
    os << "\n";
    auto numeric = [&](const FitOutcome& f) {
        std::vector<double> v{static_cast<double>(f.iterations), f.cost, f.h_inf, f.theta_err};
        if (show_theta)
            for (Index i = 0; i < nt; ++i) v.push_back(f.theta(i));
        for (Index i = 0; i < p; ++i) v.push_back(f.train_rmse(i));
        for (Index i = 0; i < nval; ++i) v.push_back(f.val_rmse(i));
        for (Index i = 0; i < nval; ++i) v.push_back(f.val_bfr(i));
        return v;
    };
    std::vector<std::string> order;
    for (const auto& f : fits)
        if (std::find(order.begin(), order.end(), f.method) == order.end()) order.push_back(f.method);
    for (const auto& m : order) {
        std::vector<std::vector<double>> rows;
        for (const auto& f : fits) {
            if (f.method != m) continue;
            const auto v = numeric(f);
            rows.push_back(v);
            os << f.method << "," << f.seed << "," << f.status << "," << f.iterations;
            for (std::size_t k = 1; k < v.size(); ++k) os << "," << detail::cell(v[k]);
            os << "\n";
        }
        if (rows.size() < 2) continue;
        for (int which = 0; which < 2; ++which) {
            os << m << "," << (which == 0 ? "mean" : "std") << ",-";
            for (std::size_t k = 0; k < rows.front().size(); ++k) {
                std::vector<double> col;
                for (const auto& r : rows)
                    if (std::isfinite(r[k])) col.push_back(r[k]);
                const auto [mu, sd] = detail::mean_std(col);
                os << "," << detail::cell(which == 0 ? mu : sd);
            }
            os << "\n";
        }
    }
    return os.str();
}

inline std::string timing_csv(const std::vector<FitOutcome>& fits) {
    std::ostringstream os;
    os << "method,seed,iterations,wall_ms,ms_per_iter\n";
    std::map<std::string, std::vector<double>> per_method;
    for (const auto& f : fits) {
        const double per = f.iterations > 0 ? f.wall_ms / static_cast<double>(f.iterations) : f.wall_ms;
        os << f.method << "," << f.seed << "," << f.iterations << "," << detail::cell(f.wall_ms) << "," << detail::cell(per)
           << "\n";
        per_method[f.method].push_back(f.wall_ms);
    }
    for (const auto& [m, v] : per_method) {
        if (v.size() < 2) continue;
        const auto [mu, sd] = detail::mean_std(v);
        os << m << ",mean,-," << detail::cell(mu) << ",-\n" << m << ",std,-," << detail::cell(sd) << ",-\n";
    }
    return os.str();
}

/// theta.csv: parameters, estimated initial conditions and the data scaling
/// per (method, seed), at 17 significant digits.
inline std::string theta_csv(const ExperimentConfig& c, const std::vector<FitOutcome>& fits) {
    std::ostringstream os;
    os << "# model=" << c.model_kind << "\n# order=" << c.order << "\n# layers=" << config_detail::join(c.layers)
       << "\n# variant=" << c.variant << "\n";
    os << "method,seed,block,index,value\n";
    auto block = [&](const FitOutcome& f, const char* name, const double* data, Index n) {
        for (Index i = 0; i < n; ++i)
            os << f.method << "," << f.seed << "," << name << "," << i << "," << csv::format(data[i], 17) << "\n";
    };
    for (const auto& f : fits) {
        block(f, "theta", f.theta.data(), f.theta.size());
        block(f, "init", f.init.data(), f.init.size());
        block(f, "input_offset", f.scaling.input_offset.data(), f.scaling.input_offset.size());
        block(f, "input_scale", f.scaling.input_scale.data(), f.scaling.input_scale.size());
        block(f, "output_offset", f.scaling.output_offset.data(), f.scaling.output_offset.size());
        block(f, "output_scale", f.scaling.output_scale.data(), f.scaling.output_scale.size());
    }
    return os.str();
}

/// Writes config.ini (frozen copy), theta.csv, summary.csv, timing.csv and
/// trace.jsonl into `dir`.
inline void write_artifacts(const std::filesystem::path& dir, const ExperimentConfig& c,
                            const std::vector<FitOutcome>& fits) {
    std::filesystem::create_directories(dir);
    write_atomic(dir / "config.ini", to_ini(c));
    write_atomic(dir / "theta.csv", theta_csv(c, fits));
    if (c.wants("csv")) {
        write_atomic(dir / "summary.csv", summary_csv(fits));
        write_atomic(dir / "timing.csv", timing_csv(fits));
    }
    if (c.wants("jsonl")) {
        std::string lines;
        for (const auto& f : fits)
            for (const auto& l : f.trace) lines += l + "\n";
        write_atomic(dir / "trace.jsonl", lines);
    }
}

/// A fitted model read back from theta.csv.
struct StoredFit {
    Vector theta;
    RowMatrix init;
    ChannelScaling scaling;
};

inline std::map<std::pair<std::string, std::uint64_t>, StoredFit> read_theta_csv(std::istream& is, const ModelHandle& m,
                                                                                Index q, Index p) {
    std::map<std::pair<std::string, std::uint64_t>, std::map<std::string, std::vector<double>>> raw;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "method,seed,block,index,value") throw DataError("theta file: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        const auto cells = csv::split(line);
        if (cells.size() != 5) throw DataError("theta file line " + std::to_string(line_no) + ": expected 5 columns");
        auto& vec = raw[{cells[0], static_cast<std::uint64_t>(csv::parse_double(cells[1], line_no))}][cells[2]];
        const auto idx = static_cast<std::size_t>(csv::parse_double(cells[3], line_no));
        if (idx != vec.size()) throw DataError("theta file line " + std::to_string(line_no) + ": indices out of order");
        vec.push_back(csv::parse_double(cells[4], line_no));
    }
    std::map<std::pair<std::string, std::uint64_t>, StoredFit> out;
    auto take = [](std::map<std::string, std::vector<double>>& b, const char* name, Index n) {
        auto& v = b[name];
        if (static_cast<Index>(v.size()) != n)
            throw DataError(std::string("theta file: block '") + name + "' has " + std::to_string(v.size()) +
                            " entries, expected " + std::to_string(n));
        return Vector(Eigen::Map<const Vector>(v.data(), n));
    };
    for (auto& [key, blocks] : raw) {
        StoredFit s;
        s.theta = take(blocks, "theta", m.n_params());
        const Vector init = take(blocks, "init", m.init_rows() * m.init_cols());
        s.init = Eigen::Map<const RowMatrix>(init.data(), m.init_rows(), m.init_cols());
        s.scaling.input_offset = take(blocks, "input_offset", q);
        s.scaling.input_scale = take(blocks, "input_scale", q);
        s.scaling.output_offset = take(blocks, "output_offset", p);
        s.scaling.output_scale = take(blocks, "output_scale", p);
        out.emplace(key, std::move(s));
    }
    if (out.empty()) throw DataError("theta file: no fitted models");
    return out;
}

} // namespace semid
