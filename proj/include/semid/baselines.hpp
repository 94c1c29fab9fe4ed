#pragma once

#include "semid/dataset.hpp"
#include "semid/error.hpp"
#include "semid/model.hpp"

#include <Eigen/QR>

#include <cmath>
#include <string>
#include <vector>

namespace semid {

/// Free-run outputs together with the sensitivities dy_t/dz, where
/// z = [theta, y_1 .. y_n] (each dy_t/dz is p x (n_theta + p n)).
struct SensitivityRollout {
    RowMatrix outputs;
    std::vector<RowMatrix> dy_dz;
};

/// Forward propagation of dy_t/dz through the rollout recursion. With
/// `horizon` > 0 the recursion for y_t is restarted from zero sensitivity
/// `horizon` steps back (truncated BPTT); outputs are always exact.
inline SensitivityRollout forward_sensitivities(const Model& model, const Vector& theta, const ConstRowBlock& init_outputs,
                                                const ConstRowBlock& inputs, Index horizon = 0) {
    const Index n = model.order(), p = model.n_outputs(), nt = model.n_params(), nz = nt + p * n, N = inputs.rows();
    SensitivityRollout r;
    r.outputs = simulate_free_run(model, theta, init_outputs, inputs);
    r.dy_dz.assign(static_cast<std::size_t>(N), RowMatrix::Zero(p, nz));
    for (Index t = 0; t < n; ++t) r.dy_dz[t].block(0, nt + p * t, p, p).setIdentity();

    std::vector<LocalJacobians> local;
    local.reserve(static_cast<std::size_t>(N));
    for (Index t = n; t < N; ++t)
        local.push_back(model.local_jacobians(r.outputs.middleRows(t - n, n), inputs.middleRows(t - n, n + 1), theta));
    auto jac = [&](Index t) -> const LocalJacobians& { return local[static_cast<std::size_t>(t - n)]; };

    auto step = [&](Index t, auto&& sens) {
        const LocalJacobians& lj = jac(t);
        RowMatrix s = RowMatrix::Zero(p, nz);
        s.leftCols(nt) = lj.d_params;
        for (Index k = 0; k < n; ++k) s.noalias() += lj.d_outputs.block(0, p * k, p, p) * sens(t - n + k);
        return s;
    };

    if (horizon <= 0) {
        for (Index t = n; t < N; ++t)
            r.dy_dz[t] = step(t, [&](Index s) -> const RowMatrix& { return r.dy_dz[s]; });
        return r;
    }
    // Truncated: y_t's sensitivity only sees the last `horizon` steps of the
    // recursion; older samples contribute nothing (initial outputs inside the
    // window keep their identity blocks).
    const RowMatrix zero = RowMatrix::Zero(p, nz);
    std::vector<RowMatrix> window(static_cast<std::size_t>(N), zero);
    for (Index t = n; t < N; ++t) {
        const Index t0 = std::max<Index>(n, t - horizon + 1);
        auto older = [&](Index q) -> const RowMatrix& {
            if (q >= t0) return window[q];
            return (q < n && q >= t - horizon) ? r.dy_dz[q] : zero;
        };
        for (Index s = t0; s <= t; ++s) window[s] = step(s, older);
        r.dy_dz[t] = window[t];
    }
    return r;
}

struct LossGradient {
    double loss = 0.0;
    Vector gradient; ///< with respect to [theta, y_1 .. y_n]
};

/// Unconstrained simulation-error loss sum_t ||y~_t - y_t||^2_W + ridge ||theta||^2
/// and its gradient with respect to (theta, initial outputs).
inline LossGradient bptt_gradient(const Model& model, const Vector& theta, const ConstRowBlock& init_outputs,
                                  const Dataset& data, const Weighting& weighting, Index horizon = 0) {
    if (data.n_outputs() != model.n_outputs() || data.n_inputs() != model.n_inputs())
        throw DimensionError("bptt_gradient: model and dataset channel counts differ");
    const SensitivityRollout s = forward_sensitivities(model, theta, init_outputs, data.inputs(), horizon);
    const Index nt = model.n_params();
    const Matrix& w = weighting.output_weight();
    LossGradient r;
    r.gradient = Vector::Zero(nt + model.n_outputs() * model.order());
    for (Index t = 0; t < data.size(); ++t) {
        const Vector e = data.outputs().row(t).transpose() - s.outputs.row(t).transpose();
        const Vector we = w * e;
        r.loss += e.dot(we);
        r.gradient.noalias() -= 2.0 * s.dy_dz[t].transpose() * we;
    }
    r.loss += weighting.ridge() * theta.squaredNorm();
    r.gradient.head(nt) += 2.0 * weighting.ridge() * theta;
    return r;
}

/// d y_t / d theta for every t (p x n_theta each), initial outputs held fixed.
inline std::vector<RowMatrix> output_parameter_sensitivity(const Model& model, const Vector& theta,
                                                           const ConstRowBlock& init_outputs,
                                                           const ConstRowBlock& inputs, Index horizon = 0) {
    SensitivityRollout s = forward_sensitivities(model, theta, init_outputs, inputs, horizon);
    std::vector<RowMatrix> out;
    out.reserve(s.dy_dz.size());
    for (const auto& d : s.dy_dz) out.push_back(d.leftCols(model.n_params()));
    return out;
}

struct AdamConfig {
    double lr = 1e-3;
    long epochs = 10000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool fit_initial_outputs = false;
    std::vector<bool> frozen; ///< per-parameter mask; empty means all free

    void validate(Index n_params) const {
        if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
        if (epochs < 0) throw ConfigError("adam: epochs must be nonnegative");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
        if (!frozen.empty() && static_cast<Index>(frozen.size()) != n_params)
            throw ConfigError("adam: frozen mask must have one entry per parameter");
    }
};

struct AdamResult {
    Vector theta;
    RowMatrix init_outputs;
    std::vector<double> loss_trace; ///< loss at the start of each epoch
    long epochs_run = 0;
    bool diverged = false;
    std::string message;
};

/// Full-batch Adam on the unconstrained simulation-error loss with BPTT
/// gradients. Initial outputs are held at the measurements unless
/// `fit_initial_outputs` is set.
inline AdamResult adam_fit(const Model& model, const Dataset& data, const Weighting& weighting, const Vector& theta0,
                           const AdamConfig& config) {
    const Index nt = model.n_params(), n = model.order(), p = model.n_outputs();
    config.validate(nt);
    if (theta0.size() != nt) throw DimensionError("adam_fit: theta0 has wrong length");
    if (data.size() <= n) throw InsufficientDataError("adam_fit: need more samples than the model order");

    AdamResult r;
    r.theta = theta0;
    r.init_outputs = data.outputs().topRows(n);
    const Index nz = nt + p * n;
    Vector mask = Vector::Ones(nz);
    for (std::size_t i = 0; i < config.frozen.size(); ++i)
        if (config.frozen[i]) mask(static_cast<Index>(i)) = 0.0;
    if (!config.fit_initial_outputs) mask.tail(p * n).setZero();

    Vector z(nz);
    z << theta0, Eigen::Map<const Vector>(r.init_outputs.data(), p * n);
    Vector m = Vector::Zero(nz), v = Vector::Zero(nz);
    double b1 = 1.0, b2 = 1.0;
    r.loss_trace.reserve(static_cast<std::size_t>(config.epochs) + 1);
    for (long e = 0; e <= config.epochs; ++e) {
        const Vector th = z.head(nt);
        const RowMatrix head = as_rows(z, nt, n, p);
        LossGradient lg;
        try {
            lg = bptt_gradient(model, th, head, data, weighting);
        } catch (const DivergedSimulationError& err) {
            r.diverged = true;
            r.message = std::string("rollout diverged at epoch ") + std::to_string(e) + ": " + err.what();
            break;
        }
        if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
            r.diverged = true;
            r.message = "non-finite loss or gradient at epoch " + std::to_string(e);
            break;
        }
        r.loss_trace.push_back(lg.loss);
        r.theta = th;
        r.init_outputs = head;
        if (e == config.epochs) break;
        const Vector g = lg.gradient.cwiseProduct(mask);
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
        b1 *= config.beta1;
        b2 *= config.beta2;
        const Vector mhat = m / (1.0 - b1), vhat = v / (1.0 - b2);
        z.array() -= config.lr * mhat.array() / (vhat.array().sqrt() + config.eps);
        r.epochs_run = e + 1;
    }
    return r;
}

/// Relative tolerance on |R_jj| / ||A_j|| below which pem_ls reports rank deficiency.
inline constexpr double kRankTolerance = 1e-10;

/// Least-squares solve of min ||A theta + b|| by Householder QR (no
/// pivoting, so a deficient column can be named).
inline Vector least_squares(const Matrix& a, const Vector& b) {
    if (a.rows() < a.cols()) throw InsufficientDataError("least squares: fewer equations than unknowns");
    Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
    for (Index j = 0; j < a.cols(); ++j) {
        const double cn = a.col(j).norm();
        if (cn == 0.0 || std::abs(r(j, j)) < kRankTolerance * cn)
            throw RankBreakdownError(static_cast<std::size_t>(j),
                                     "least squares: regressor column " + std::to_string(j) + " is linearly dependent");
    }
    const Vector qtb = (qr.householderQ().transpose() * (-b)).head(a.cols());
    return r.triangularView<Eigen::Upper>().solve(qtb);
}

/// One-step prediction-error estimate for models whose constraint residual
/// is affine in theta: every h_t(theta) evaluated on measured data is
/// A_t theta + b_t, and the stacked residual is minimized in least squares.
inline Vector pem_ls(const Model& model, const Dataset& data) {
    if (!model.linear_in_params()) throw ConfigError("pem_ls: model '" + model.name() + "' is not linear in its parameters");
    if (data.n_outputs() != model.n_outputs() || data.n_inputs() != model.n_inputs())
        throw DimensionError("pem_ls: model and dataset channel counts differ");
    const Index n = model.order(), p = model.n_outputs(), nt = model.n_params(), N = data.size();
    if (N <= n) throw InsufficientDataError("pem_ls: need more samples than the model order");
    Matrix a(p * (N - n), nt);
    Vector b(p * (N - n));
    const Vector zero = Vector::Zero(nt);
    for (Index t = n; t < N; ++t) {
        auto yw = data.outputs().middleRows(t - n, n + 1);
        auto uw = data.inputs().middleRows(t - n, n + 1);
        a.middleRows(p * (t - n), p) = model.residual_jacobians(yw, uw, zero).d_params;
        b.segment(p * (t - n), p) = model.residual(yw, uw, zero);
    }
    return least_squares(a, b);
}

} // namespace semid
