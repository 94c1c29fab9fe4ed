#pragma once

#include "semid/flcmo.hpp"
#include "semid/flops.hpp"
#include "semid/models/mlp.hpp"
#include "semid/qless_qr.hpp"
#include "semid/rng.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <vector>

namespace semid {

/// Random Jacobian with the output-error pattern: dense theta block, then a
/// p (phi + 1) wide window whose last p x p block is the identity.
inline SparseJacobian random_oe_jacobian(Index n_theta, Index p, Index phi, Index N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index m = p * (N - phi);
    SparseJacobian j(m, n_theta + p * N, n_theta, p);
    for (Index t = 0; t < N - phi; ++t) {
        for (Index c = 0; c < p; ++c) {
            for (Index k = 0; k < n_theta; ++k) j.push(k, normal(rng));
            for (Index k = 0; k < p * (phi + 1); ++k) {
                const bool diag = k >= p * phi;
                j.push(n_theta + p * t + k, diag ? (k - p * phi == c ? 1.0 : 0.0) : 0.5 * normal(rng));
            }
            j.finish_row();
        }
    }
    return j;
}

/// Ledger of the structured factorization of a random output-error pattern.
inline FlopLedger measure_flops(Index n_theta, Index p, Index phi, Index N, std::uint64_t seed = 1) {
    return qless_qr(random_oe_jacobian(n_theta, p, phi, N, seed)).ledger;
}

/// Synthetic output-error problem with p = 2 outputs and order phi = 2: an
/// MLP of one hidden layer on white-noise data (one input channel).
inline Problem make_bench_problem(Index N, std::uint64_t seed, Index hidden = 4) {
    auto model = std::make_shared<MlpModel>(2, 2, 1, std::vector<Index>{hidden});
    auto rng = make_rng(seed, stream::input);
    std::normal_distribution<double> nd(0.0, 1.0);
    RowMatrix u(N, 1), y(N, 2);
    for (Index i = 0; i < u.size(); ++i) u.data()[i] = nd(rng);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = nd(rng);
    return assemble(model, Dataset(std::move(u), std::move(y), 1.0), Weighting::identity(2, 1));
}

struct BenchRow {
    Index N = 0;
    Index m = 0;
    Index n_vars = 0;
    Index n_theta = 0;
    double dense_ms = 0.0;  ///< median wall time of one dense-fallback step
    double sparse_ms = 0.0; ///< median wall time of one sparse step
    std::int64_t flops_pred = 0;  ///< closed-form factorization count
    std::uint64_t flops_meas = 0; ///< ledger factorization count of the sparse step

    double speedup() const { return sparse_ms > 0.0 ? dense_ms / sparse_ms : 0.0; }
};

namespace detail {
inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
} // namespace detail

/// Times one full FL-CMO step (cost, constraints, Jacobian, factorization,
/// solve) along the sparse path and along the dense fallback.
inline BenchRow bench_step(Index N, int reps, std::uint64_t seed = 1, bool run_dense = true) {
    if (reps < 1) throw ConfigError("bench: reps must be at least 1");
    const Problem pr = make_bench_problem(N, seed);
    const Vector x = initial_point(pr, seed);
    SolverConfig sparse, dense;
    dense.dense_fallback = true;
    auto time_step = [&](const SolverConfig& c, FlopLedger* ledger) {
        std::vector<double> ms;
        for (int r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            auto step = flcmo_step(pr, x, c);
            ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            if (ledger) *ledger = step.second.flops;
        }
        return detail::median(ms);
    };
    BenchRow row;
    row.N = N;
    row.m = pr.n_constraints();
    row.n_vars = pr.n_vars();
    row.n_theta = pr.n_theta();
    FlopLedger ledger;
    row.sparse_ms = time_step(sparse, &ledger);
    row.flops_meas = ledger.factorization();
    row.flops_pred = predict_flops(pr.n_theta(), 2, 2, N).total();
    if (run_dense) row.dense_ms = time_step(dense, nullptr);
    return row;
}

} // namespace semid
