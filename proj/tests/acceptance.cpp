#include "semid/bench.hpp"
#include "semid/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>

using namespace semid;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;
std::vector<int> selected;

void run(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s < budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("criterion %2d %s: %s; %s; %.1f s (budget %.0f s)\n", id, pass ? "PASS" : "FAIL", name, o.detail.c_str(),
                s, budget_s);
    std::fflush(stdout);
}

std::string sci(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*e", digits - 1, v);
    return buf;
}

std::string preset(const char* name) { return std::string(SEMID_SOURCE_DIR) + "/presets/" + name; }

Vector lti_truth() {
    Vector th(2);
    th << 0.5, 1.0;
    return th;
}

Problem lti_problem(Index N) {
    const Dataset d = gen_lti(lti_truth(), InputSpec{}, N, 1);
    return assemble(std::make_shared<LtiFirstOrder>(), d, Weighting::identity(1, 1));
}

SolverConfig lti_solver(double step = 0.01) {
    SolverConfig c;
    c.gain = 1.0;
    c.step = step;
    c.tol_step = 1e-8;
    c.tol_constraint = 1e-8;
    c.max_iters = 100000;
    return c;
}

double rollout_loss(const Problem& pr, const Vector& z) {
    const Index nt = pr.n_theta(), n = pr.order(), p = pr.block_size();
    const RowMatrix head = as_rows(z, nt, n, p);
    const RowMatrix y = simulate_free_run(*pr.model(), z.head(nt), head, pr.data().inputs());
    return (pr.data().outputs() - y).squaredNorm();
}

Vector fd_gradient(const Problem& pr, Vector z, double eps) {
    Vector g(z.size());
    for (Index k = 0; k < z.size(); ++k) {
        const double keep = z(k);
        z(k) = keep + eps;
        const double fp = rollout_loss(pr, z);
        z(k) = keep - eps;
        const double fm = rollout_loss(pr, z);
        z(k) = keep;
        g(k) = (fp - fm) / (2.0 * eps);
    }
    return g;
}

Outcome stationarity() {
    const Problem pr = lti_problem(50);
    const SolverConfig c = lti_solver();
    double worst_rg = 0.0, worst_match = 0.0, worst_generic = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Vector x0 = initial_point(pr, seed);
        const SolveResult r = solve(pr, x0, c);
        if (r.status != SolveStatus::Converged) return {false, "seed " + std::to_string(seed) + " " + to_string(r.status)};
        const ReducedGradient rg = pr.reduced_gradient(r.x);
        worst_rg = std::max(worst_rg, inf_norm(rg.gradient));
        const Vector z = r.x.head(pr.n_free());
        const Vector fd = fd_gradient(pr, z, 1e-6);
        worst_match = std::max(worst_match, (rg.gradient - fd).norm() / std::max(fd.norm(), 1.0));
        const Vector xg = pr.rollout_point(x0.head(2), x0.segment(2, 1).transpose());
        const Vector g0 = pr.reduced_gradient(xg).gradient;
        const Vector fd0 = fd_gradient(pr, xg.head(pr.n_free()), 1e-6);
        worst_generic = std::max(worst_generic, (g0 - fd0).norm() / fd0.norm());
    }
    const bool pass = worst_rg < 1e-5 && worst_match < 1e-4 && worst_generic < 1e-4;
    return {pass, "max ||reduced grad||_inf " + sci(worst_rg) + " (< 1e-5), FD match at converged points " +
                      sci(worst_match) + ", FD match at generic feasible points " + sci(worst_generic) + " (< 1e-4)"};
}

std::vector<Vector> lti_recovery(double step, double& worst_theta, double& worst_h, bool& all_converged) {
    const Problem pr = lti_problem(200);
    const SolverConfig c = lti_solver(step);
    std::vector<Vector> out;
    worst_theta = worst_h = 0.0;
    all_converged = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SolveResult r = solve(pr, initial_point(pr, seed), c);
        all_converged = all_converged && r.status == SolveStatus::Converged;
        out.push_back(pr.theta(r.x));
        worst_theta = std::max(worst_theta, inf_norm(pr.theta(r.x) - lti_truth()));
        worst_h = std::max(worst_h, inf_norm(pr.constraint_residual(r.x)));
    }
    return out;
}

Outcome exact_recovery() {
    double wt, wh;
    bool conv;
    lti_recovery(0.01, wt, wh, conv);
    return {conv && wt < 1e-4 && wh < 1e-6,
            "5 seeds, max |theta - theta*|_inf " + sci(wt) + " (< 1e-4), max ||h||_inf " + sci(wh) + " (< 1e-6)"};
}

Outcome qr_correctness() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> nt(1, 6), pp(1, 3), ph(1, 3), nn(10, 60);
    std::normal_distribution<double> nd;
    double worst_gram = 0.0, worst_sigma = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Index n_theta = nt(rng), p = pp(rng), phi = ph(rng), N = nn(rng);
        const SparseJacobian j = random_oe_jacobian(n_theta, p, phi, N, 500 + trial);
        const Matrix jd = j.to_dense();
        const Matrix gram = jd * jd.transpose();
        const TriangularFactor r = qless_qr(j);
        const Matrix rd = r.to_dense();
        worst_gram = std::max(worst_gram, (rd.transpose() * rd - gram).norm() / gram.norm());
        Vector rhs(j.rows());
        for (Index i = 0; i < rhs.size(); ++i) rhs(i) = nd(rng);
        const Vector sigma = solve_step_system(r, rhs);
        const Vector dense = gram.partialPivLu().solve(rhs);
        worst_sigma = std::max(worst_sigma, (sigma - dense).norm() / dense.norm());
    }
    return {worst_gram < 1e-10 && worst_sigma < 1e-8, "20 instances, max ||R^T R - J J^T||_F / ||J J^T||_F " +
                                                          sci(worst_gram) + " (< 1e-10), max sigma rel err " +
                                                          sci(worst_sigma) + " (< 1e-8)"};
}

Outcome flop_exactness() {
    const Index grid[12][4] = {{2, 1, 1, 12}, {2, 1, 2, 20}, {3, 1, 1, 30}, {1, 2, 1, 15}, {2, 2, 2, 25}, {4, 2, 1, 40},
                               {3, 3, 1, 20}, {5, 1, 3, 50}, {2, 3, 2, 18}, {6, 2, 2, 35}, {1, 1, 4, 40}, {8, 2, 3, 60}};
    int equal = 0, closed_vs_summed = 0;
    std::ostringstream example;
    for (int g = 0; g < 12; ++g) {
        const Index nt = grid[g][0], p = grid[g][1], phi = grid[g][2], N = grid[g][3];
        const FlopModel fm(nt, p, phi, N);
        const FlopPrediction cf = fm.closed_form(), sm = fm.summed();
        const FlopLedger l = measure_flops(nt, p, phi, N);
        if (cf.housegen == sm.housegen && cf.inner_product == sm.inner_product && cf.rank1_update == sm.rank1_update)
            ++closed_vs_summed;
        const bool eq = static_cast<std::int64_t>(l.housegen) == cf.housegen &&
                        static_cast<std::int64_t>(l.inner_product) == cf.inner_product &&
                        static_cast<std::int64_t>(l.rank1_update) == cf.rank1_update;
        if (eq) ++equal;
        if (g == 0)
            example << "(n_theta,p,phi,N)=(2,1,1,12) ledger (" << l.housegen << "," << l.inner_product << ","
                    << l.rank1_update << ") vs closed form (" << cf.housegen << "," << cf.inner_product << ","
                    << cf.rank1_update << ")";
    }
    return {equal == 12, "ledger equals closed form on " + std::to_string(equal) + "/12 grid points; closed forms equal "
                             "direct sums on " + std::to_string(closed_vs_summed) + "/12; " + example.str() +
                             "; fill-in from the dense theta rows widens every reflector beyond the nominal pattern"};
}

Outcome complexity_slope() {
    std::vector<double> lx, ly;
    for (Index m : {50, 100, 200, 400}) {
        const FlopLedger l = measure_flops(2, 1, 2, m + 2);
        lx.push_back(std::log(static_cast<double>(m)));
        ly.push_back(std::log(static_cast<double>(l.factorization())));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i] / 4, my += ly[i] / 4;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
    const double slope = sxy / sxx;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", slope);
    return {slope >= 1.9 && slope <= 2.1, std::string("log-log slope of ledger total vs m ") + buf + " (in [1.9, 2.1])"};
}

Outcome speedup_trend() {
    const BenchRow a = bench_step(1000, 3);
    const BenchRow b = bench_step(5000, 1);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "N=1000: dense %.0f ms, sparse %.0f ms, ratio %.2f (>= 1.3); N=5000: dense %.0f ms, sparse %.0f ms, "
                  "ratio %.2f (> %.2f)",
                  a.dense_ms, a.sparse_ms, a.speedup(), b.dense_ms, b.sparse_ms, b.speedup(), a.speedup());
    return {a.speedup() >= 1.3 && b.speedup() > a.speedup(), buf};
}

Outcome maglev() {
    const ExperimentConfig c = load_config(preset("maglev.ini"));
    const auto fits = run_experiment(c);
    std::vector<const FitOutcome*> fl, ad, ls;
    for (const auto& f : fits) (f.method == "flcmo" ? fl : f.method == "adam" ? ad : ls).push_back(&f);
    const double km = MaglevModel::kTrueKm;
    auto km_err = [&](const FitOutcome* f) { return std::abs(f->theta(0) - km) / km; };
    const FitOutcome* best = *std::min_element(fl.begin(), fl.end(), [&](auto a, auto b) { return km_err(a) < km_err(b); });
    auto median_abs_k0 = [](const std::vector<const FitOutcome*>& v) {
        std::vector<double> k;
        for (auto f : v) k.push_back(std::abs(f->theta(1)));
        return detail::median(k);
    };
    const double fl_k0 = median_abs_k0(fl), ls_k0 = median_abs_k0(ls);
    int adam_worse = 0;
    for (std::size_t s = 0; s < fl.size(); ++s)
        if (!(km_err(ad[s]) <= km_err(fl[s]))) ++adam_worse;
    const bool pass = km_err(best) < 0.05 && std::abs(best->theta(1)) < 1e-3 && ls_k0 >= 5.0 * fl_k0 && adam_worse >= 8;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "best FL-CMO (seed %llu) k_m %.5e (rel err %.2f%%, < 5%%), k_0 %.3e (|k_0| < 1e-3); median |k_0| LS "
                  "%.3e vs FL-CMO %.3e (ratio %.1f, >= 5); Adam k_m error worse in %d/10 seeds (>= 8)",
                  static_cast<unsigned long long>(best->seed), best->theta(0), 100.0 * km_err(best), best->theta(1),
                  ls_k0, fl_k0, ls_k0 / fl_k0, adam_worse);
    return {pass, buf};
}

Outcome vanishing_exploding() {
    const Dataset d = gen_lti(lti_truth(), InputSpec{}, 200, 8);
    const Dataset noisy = add_noise(d, NoiseSpec::gaussian(0.05), 8);
    const RowMatrix head = noisy.outputs().topRows(1);
    const Vector full = bptt_gradient(LtiFirstOrder{}, lti_truth(), head, noisy, Weighting::identity(1, 1)).gradient;
    const Vector trunc = bptt_gradient(LtiFirstOrder{}, lti_truth(), head, noisy, Weighting::identity(1, 1), 40).gradient;
    const double rel = (trunc - full).norm() / full.norm();
    Vector th(2);
    th << 1.05, 1.0;
    const auto s = output_parameter_sensitivity(LtiFirstOrder{}, th, RowMatrix::Zero(1, 1), d.inputs());
    const double ratio = s[199].norm() / s[99].norm();
    char buf[256];
    std::snprintf(buf, sizeof buf, "theta1=0.5 horizon-40 BPTT rel err %.3e (< 1e-8); theta1=1.05 ||dy_N/dtheta|| / "
                  "||dy_N/2/dtheta|| = %.1f (>= 10)", rel, ratio);
    return {rel < 1e-8 && ratio >= 10.0, buf};
}

Outcome wiener_hammerstein() {
    const ExperimentConfig c = load_config(preset("wh.ini"));
    const auto fits = run_experiment(c);
    const FitOutcome& f = fits.front();
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "N=%lld, %s after %ld iterations, train RMSE (%.3f, %.3f), test BFR on %lld fresh samples (%.4f, "
                  "%.4f) (> 0.70 both)",
                  static_cast<long long>(c.n), f.status.c_str(), f.iterations, f.train_rmse(0), f.train_rmse(1),
                  static_cast<long long>(c.validation_n), f.val_bfr(0), f.val_bfr(1));
    return {!f.failed && f.val_bfr(0) > 0.70 && f.val_bfr(1) > 0.70, buf};
}

Outcome identities() {
    const Dataset w = gen_wh_mimo(300, 4);
    const Vector b = bfr(w.outputs(), w.outputs()), r = rmse(w.outputs(), w.outputs());
    const bool metric_ok = (b.array() == 1.0).all() && (r.array() == 0.0).all();
    const Dataset m = gen_maglev(200, 3, NoiseSpec::uniform(0.0));
    const Problem pr = assemble(std::make_shared<MaglevModel>(), m, Weighting::identity(1, 1));
    Vector th(2);
    th << MaglevModel::kTrueKm, MaglevModel::kTrueK0;
    const double h = inf_norm(pr.constraint_residual(pr.initial_guess(th)));
    auto bytes = [](const Dataset& d) {
        std::ostringstream os;
        csv::write(os, d);
        return os.str();
    };
    const bool repro = bytes(gen_lti(lti_truth(), InputSpec{}, 200, 5)) == bytes(gen_lti(lti_truth(), InputSpec{}, 200, 5)) &&
                       bytes(add_noise(w, NoiseSpec::gaussian(0.1), 6)) == bytes(add_noise(gen_wh_mimo(300, 4), NoiseSpec::gaussian(0.1), 6)) &&
                       bytes(gen_maglev(200, 7)) == bytes(gen_maglev(200, 7));
    return {metric_ok && h < 1e-15 && repro, std::string("BFR(y,y)=1 and RMSE(y,y)=0: ") + (metric_ok ? "yes" : "no") +
                                                  ", maglev truth residual " + sci(h) + " (< 1e-15), byte-identical "
                                                  "lti/wh/maglev regeneration: " + (repro ? "yes" : "no")};
}

Outcome step_robustness() {
    double wt, wh, wt2, wh2;
    bool c1, c2;
    const auto a = lti_recovery(0.01, wt, wh, c1);
    const auto b = lti_recovery(0.005, wt2, wh2, c2);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, inf_norm(a[i] - b[i]));
    return {c1 && c2 && diff < 1e-4, "max |theta(tau=0.01) - theta(tau=0.005)|_inf over 5 seeds " + sci(diff) + " (< 1e-4)"};
}

} // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    run(1, "stationarity equivalence", 10, stationarity);
    run(2, "exact recovery", 60, exact_recovery);
    run(3, "sparse QR correctness", 30, qr_correctness);
    run(4, "FLOP exactness", 30, flop_exactness);
    run(5, "complexity slope", 60, complexity_slope);
    run(6, "speedup trend", 600, speedup_trend);
    run(7, "maglev gray-box", 900, maglev);
    run(8, "vanishing/exploding gradients", 5, vanishing_exploding);
    run(9, "Wiener-Hammerstein MIMO", 1200, wiener_hammerstein);
    run(10, "metric and generator identities", 5, identities);
    run(11, "step-size robustness", 120, step_robustness);
    std::printf("%d of %zu criteria failed\n", failures, selected.empty() ? std::size_t{11} : selected.size());
    return failures == 0 ? 0 : 1;
}
