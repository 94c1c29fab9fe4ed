#pragma once

#include "semid/error.hpp"
#include "semid/problem.hpp"
#include "semid/qless_qr.hpp"
#include "semid/rng.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace semid {

struct SolverConfig {
    double gain = 1.0;             ///< K
    double step = 1e-2;            ///< tau
    double tol_step = 1e-8;        ///< eps_f, on ||dx||_2
    double tol_constraint = 1e-8;  ///< eps_h, on ||h||_2
    long max_iters = 10000;
    bool dense_fallback = false;

    void validate() const {
        if (!(gain > 0.0)) throw ConfigError("solver: gain K must be positive");
        if (!(step > 0.0)) throw ConfigError("solver: step size tau must be positive");
        if (!(tol_step > 0.0) || !(tol_constraint > 0.0)) throw ConfigError("solver: tolerances must be positive");
        if (max_iters < 1) throw ConfigError("solver: max_iters must be at least 1");
    }
};

struct StepDiagnostics {
    Vector dx;
    Vector sigma;
    double cost = 0.0;
    double dx_norm = 0.0;
    double h_norm = 0.0;
    double factor_ms = 0.0;
    FlopLedger flops;
};

struct TraceRecord {
    long iter = 0;
    double cost = 0.0;
    double h_norm = 0.0;
    double dx_norm = 0.0;
    double factor_ms = 0.0;
    std::uint64_t cumulative_flops = 0;
};

enum class SolveStatus { Converged, MaxIters, Diverged, RankBreakdown };

inline std::string to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIters: return "max-iters";
    case SolveStatus::Diverged: return "diverged";
    case SolveStatus::RankBreakdown: return "rank-breakdown";
    }
    return "?";
}

struct SolveResult {
    Vector x;
    SolveStatus status = SolveStatus::MaxIters;
    long iterations = 0; ///< Euler steps taken
    std::vector<TraceRecord> trace;
    FlopLedger flops;
    double wall_ms = 0.0;
    std::string message;
};

/// Direction dx = -grad f - J^T sigma with (J J^T) sigma = K h - J grad f,
/// which makes the constraint values obey dh/dt = -K h along the flow.
/// Evaluated at x; does not move x.
inline StepDiagnostics flcmo_direction(const Problem& problem, const Vector& x, const SolverConfig& config) {
    StepDiagnostics d;
    const CostGradient cg = problem.cost_and_gradient(x);
    const Vector h = problem.constraint_residual(x);
    const SparseJacobian j = problem.constraint_jacobian(x);
    d.cost = cg.cost;
    d.h_norm = h.norm();

    const auto t0 = std::chrono::steady_clock::now();
    const TriangularFactor r = config.dense_fallback ? qless_qr_dense(j) : qless_qr(j);
    d.factor_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    d.flops = r.ledger;

    const Vector rhs = config.gain * h - multiply(j, cg.gradient, &d.flops);
    d.sigma = solve_step_system(r, rhs, &d.flops);
    d.dx = -cg.gradient - multiply_transpose(j, d.sigma, &d.flops);
    d.dx_norm = d.dx.norm();
    if (!d.dx.allFinite() || !std::isfinite(d.h_norm))
        throw DivergenceError("solver: non-finite step (cost " + std::to_string(d.cost) + ", ||h|| " +
                              std::to_string(d.h_norm) + "); try a smaller step size tau");
    return d;
}

/// One Euler step of the FL-CMO dynamics: x_next = x + tau dx.
inline std::pair<Vector, StepDiagnostics> flcmo_step(const Problem& problem, const Vector& x,
                                                     const SolverConfig& config) {
    StepDiagnostics d = flcmo_direction(problem, x, config);
    Vector next = x + config.step * d.dx;
    return {std::move(next), std::move(d)};
}

/// Iterates until ||dx||_2 < eps_f and ||h||_2 < eps_h (both evaluated at the
/// current iterate) or max_iters steps have been taken.
inline SolveResult solve(const Problem& problem, const Vector& x0, const SolverConfig& config,
                         const std::function<void(const TraceRecord&)>& on_iteration = {}) {
    config.validate();
    if (x0.size() != problem.n_vars()) throw DimensionError("solve: starting point has wrong length");
    SolveResult res;
    res.x = x0;
    if (!x0.allFinite()) {
        res.status = SolveStatus::Diverged;
        res.message = "starting point is not finite";
        return res;
    }
    const auto start = std::chrono::steady_clock::now();
    for (long k = 0;; ++k) {
        StepDiagnostics d;
        try {
            d = flcmo_direction(problem, res.x, config);
        } catch (const RankBreakdownError& e) {
            res.status = SolveStatus::RankBreakdown;
            res.message = e.what();
            break;
        } catch (const DivergenceError& e) {
            res.status = SolveStatus::Diverged;
            res.message = e.what();
            break;
        }
        res.flops += d.flops;
        TraceRecord rec{k, d.cost, d.h_norm, d.dx_norm, d.factor_ms, res.flops.total()};
        res.trace.push_back(rec);
        if (on_iteration) on_iteration(rec);
        if (d.dx_norm < config.tol_step && d.h_norm < config.tol_constraint) {
            res.status = SolveStatus::Converged;
            break;
        }
        if (k >= config.max_iters) {
            res.status = SolveStatus::MaxIters;
            res.message = "iteration limit reached (||dx|| " + std::to_string(d.dx_norm) + ", ||h|| " +
                          std::to_string(d.h_norm) + ")";
            break;
        }
        res.x += config.step * d.dx;
        res.iterations = k + 1;
        if (!res.x.allFinite()) {
            res.status = SolveStatus::Diverged;
            res.message = "iterate became non-finite at step " + std::to_string(k + 1) + "; try a smaller step size tau";
            break;
        }
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return res;
}

/// Starting point: theta from the model initializer on the seed's parameter
/// stream, trajectory at the measurements.
inline Vector initial_point(const Problem& problem, std::uint64_t seed) {
    auto rng = make_rng(seed, stream::params);
    const Vector theta = problem.variant() == Variant::StateSpace ? problem.state_space_model()->initial_params(rng)
                                                                  : problem.model()->initial_params(rng);
    return problem.initial_guess(theta);
}

struct StationarityReport {
    double h_inf = 0.0;
    double reduced_gradient_inf = 0.0;
    double lagrangian_gradient_inf = 0.0; ///< ||grad f + J^T lambda||_inf, lambda by back substitution
    double projected_gradient_inf = 0.0;  ///< same with least-squares multipliers
    double tolerance = 0.0;
    bool pass = false;
};

inline StationarityReport verify_stationarity(const Problem& problem, const Vector& x, const SolverConfig& config) {
    StationarityReport rep;
    rep.tolerance = 10.0 * std::max(config.tol_step, config.tol_constraint);
    const Vector h = problem.constraint_residual(x);
    const SparseJacobian j = problem.constraint_jacobian(x);
    const Vector grad = problem.cost_and_gradient(x).gradient;
    rep.h_inf = inf_norm(h);
    const Vector lambda = problem.recover_multipliers(x, j, grad);
    const Vector lag = grad + multiply_transpose(j, lambda);
    rep.reduced_gradient_inf = inf_norm(lag.head(problem.n_free()));
    rep.lagrangian_gradient_inf = inf_norm(lag);
    try {
        const TriangularFactor r = qless_qr(j);
        const Vector ls = -solve_step_system(r, multiply(j, grad));
        rep.projected_gradient_inf = inf_norm(grad + multiply_transpose(j, ls));
    } catch (const RankBreakdownError&) {
        rep.projected_gradient_inf = std::numeric_limits<double>::infinity();
    }
    rep.pass = rep.h_inf < rep.tolerance && rep.reduced_gradient_inf < rep.tolerance &&
               rep.lagrangian_gradient_inf < rep.tolerance;
    return rep;
}

} // namespace semid
