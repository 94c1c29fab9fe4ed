#pragma once

#include "semid/dataset.hpp"
#include "semid/error.hpp"
#include "semid/model.hpp"
#include "semid/sparse_jacobian.hpp"

#include <Eigen/LU>

#include <cmath>
#include <string>
#include <utility>

namespace semid {

enum class Variant { OutputError, ErrorsInVariables, StateSpace };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::OutputError: return "oe";
    case Variant::ErrorsInVariables: return "eiv";
    case Variant::StateSpace: return "ss";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "oe") return Variant::OutputError;
    if (s == "eiv") return Variant::ErrorsInVariables;
    if (s == "ss") return Variant::StateSpace;
    throw ConfigError("unknown problem variant '" + s + "' (expected oe, eiv or ss)");
}

struct CostGradient {
    double cost = 0.0;
    Vector gradient;
};

struct ReducedGradient {
    Vector gradient;
    Vector multipliers;
    double infeasibility = 0.0; ///< ||h||_inf at the evaluation point
    bool stale = false;         ///< infeasibility exceeded the caller's bound
};

/// Equality-constrained simulation-error problem.
///
/// Variable layout (time-major, channel-minor):
///   OE:  [theta | y_1 .. y_N]
///   EIV: [theta | u_1 .. u_N | y_1 .. y_N]
///   SS:  [theta | x_1 .. x_N]
/// Constraints are stacked in time order, one block of `block_size()` scalar
/// rows per time step; the last m variables form the trajectory block w
/// whose Jacobian is block lower triangular.
class Problem {
public:
    Problem(ModelPtr model, Dataset data, Weighting weighting, Variant variant, Vector row_scale = {})
        : io_(std::move(model)), data_(std::move(data)), w_(std::move(weighting)), variant_(variant) {
        if (!io_) throw DimensionError("problem: null model");
        if (variant_ == Variant::StateSpace) throw DimensionError("problem: state-space variant needs a state-space model");
        if (io_->n_outputs() != data_.n_outputs() || io_->n_inputs() != data_.n_inputs())
            throw DimensionError("problem: model and dataset channel counts differ");
        order_ = io_->order();
        block_ = io_->n_outputs();
        n_theta_ = io_->n_params();
        init(std::move(row_scale));
    }

    Problem(StateSpaceModelPtr model, Dataset data, Weighting weighting, Vector row_scale = {})
        : ss_(std::move(model)), data_(std::move(data)), w_(std::move(weighting)), variant_(Variant::StateSpace) {
        if (!ss_) throw DimensionError("problem: null model");
        if (ss_->n_outputs() != data_.n_outputs() || ss_->n_inputs() != data_.n_inputs())
            throw DimensionError("problem: model and dataset channel counts differ");
        order_ = 1;
        block_ = ss_->state_dim();
        n_theta_ = ss_->n_params();
        init(std::move(row_scale));
    }

    Variant variant() const noexcept { return variant_; }
    const Dataset& data() const noexcept { return data_; }
    const Weighting& weighting() const noexcept { return w_; }
    const ModelPtr& model() const noexcept { return io_; }
    const StateSpaceModelPtr& state_space_model() const noexcept { return ss_; }

    Index order() const noexcept { return order_; }
    Index samples() const noexcept { return data_.size(); }
    Index n_theta() const noexcept { return n_theta_; }
    Index n_vars() const noexcept { return n_vars_; }
    Index n_constraints() const noexcept { return m_; }
    Index block_size() const noexcept { return block_; }
    /// Width of the free block z = [theta, (u), first trajectory entries].
    Index n_free() const noexcept { return n_vars_ - m_; }
    const Vector& row_scale() const noexcept { return row_scale_; }

    Index input_offset() const noexcept { return n_theta_; }
    Index trajectory_offset() const noexcept {
        return variant_ == Variant::ErrorsInVariables ? n_theta_ + data_.n_inputs() * samples() : n_theta_;
    }
    /// Width of one trajectory sample (p for OE/EIV, state dimension for SS).
    Index trajectory_width() const noexcept { return block_; }

    Vector theta(const Vector& x) const { return x.head(n_theta_); }
    Eigen::Map<const RowMatrix> trajectory(const Vector& x) const {
        return as_rows(x, trajectory_offset(), samples(), trajectory_width());
    }
    /// Input sequence used by the constraints: data for OE/SS, variables for EIV.
    RowMatrix inputs(const Vector& x) const {
        if (variant_ == Variant::ErrorsInVariables) return as_rows(x, n_theta_, samples(), data_.n_inputs());
        return data_.inputs();
    }

    /// Starting point: given theta, trajectory at the measurements (zeros for
    /// states) and, for EIV, inputs at the measurements.
    Vector initial_guess(const Vector& theta) const {
        check_theta(theta);
        Vector x = Vector::Zero(n_vars_);
        x.head(n_theta_) = theta;
        if (variant_ == Variant::ErrorsInVariables)
            as_rows(x, n_theta_, samples(), data_.n_inputs()) = data_.inputs();
        if (variant_ != Variant::StateSpace) as_rows(x, trajectory_offset(), samples(), block_) = data_.outputs();
        return x;
    }

    /// Feasible point obtained by rolling the model out from `head` (the first
    /// n outputs, or x_1 for SS), with inputs taken from `base` (EIV) or data.
    Vector rollout_point(const Vector& theta, const ConstRowBlock& head, const Vector* base = nullptr) const {
        check_theta(theta);
        Vector x = base ? *base : initial_guess(theta);
        if (x.size() != n_vars_) throw DimensionError("problem: base point has wrong length");
        x.head(n_theta_) = theta;
        if (variant_ == Variant::StateSpace) {
            if (head.rows() != 1 || head.cols() != block_) throw DimensionError("problem: SS head must be 1 x state_dim");
            auto xs = as_rows(x, trajectory_offset(), samples(), block_);
            xs.row(0) = head.row(0);
            for (Index t = 0; t + 1 < samples(); ++t) {
                Vector next = ss_->step(xs.row(t).transpose(), data_.inputs().row(t).transpose(), theta);
                if (!next.allFinite()) throw DivergedSimulationError(static_cast<std::size_t>(t + 1));
                xs.row(t + 1) = next.transpose();
            }
            return x;
        }
        RowMatrix u = inputs(x);
        as_rows(x, trajectory_offset(), samples(), block_) = simulate_free_run(*io_, theta, head, u);
        return x;
    }

    CostGradient cost_and_gradient(const Vector& x) const {
        check_x(x);
        CostGradient r;
        r.gradient = Vector::Zero(n_vars_);
        const Matrix& wy = w_.output_weight();
        const Vector th = theta(x);
        if (variant_ == Variant::StateSpace) {
            auto xs = trajectory(x);
            for (Index t = 0; t < samples(); ++t) {
                const Vector xt = xs.row(t).transpose(), ut = data_.inputs().row(t).transpose();
                const Vector e = data_.outputs().row(t).transpose() - ss_->output(xt, ut, th);
                const Vector we = wy * e;
                r.cost += e.dot(we);
                const StateJacobians oj = ss_->output_jacobians(xt, ut, th);
                r.gradient.segment(trajectory_offset() + t * block_, block_) -= 2.0 * oj.d_state.transpose() * we;
                r.gradient.head(n_theta_) -= 2.0 * oj.d_params.transpose() * we;
            }
        } else {
            auto y = trajectory(x);
            const Index p = block_;
            for (Index t = 0; t < samples(); ++t) {
                const Vector e = data_.outputs().row(t).transpose() - y.row(t).transpose();
                const Vector we = wy * e;
                r.cost += e.dot(we);
                r.gradient.segment(trajectory_offset() + t * p, p) = -2.0 * we;
            }
            if (variant_ == Variant::ErrorsInVariables) {
                const Matrix& wu = w_.input_weight();
                const Index q = data_.n_inputs();
                auto u = as_rows(x, n_theta_, samples(), q);
                for (Index t = 0; t < samples(); ++t) {
                    const Vector e = data_.inputs().row(t).transpose() - u.row(t).transpose();
                    const Vector we = wu * e;
                    r.cost += e.dot(we);
                    r.gradient.segment(n_theta_ + t * q, q) = -2.0 * we;
                }
            }
        }
        r.cost += w_.ridge() * th.squaredNorm();
        r.gradient.head(n_theta_) += 2.0 * w_.ridge() * th;
        return r;
    }

    /// h(x), scaled row-wise by 1 / row_scale when a scale is set.
    Vector constraint_residual(const Vector& x) const {
        check_x(x);
        Vector h(m_);
        const Vector th = theta(x);
        if (variant_ == Variant::StateSpace) {
            auto xs = trajectory(x);
            for (Index t = 0; t + 1 < samples(); ++t)
                h.segment(t * block_, block_) =
                    xs.row(t + 1).transpose() -
                    ss_->step(xs.row(t).transpose(), data_.inputs().row(t).transpose(), th);
        } else {
            const RowMatrix u = inputs(x);
            auto y = trajectory(x);
            const Index n = order_;
            for (Index t = n; t < samples(); ++t)
                h.segment((t - n) * block_, block_) = io_->residual(y.middleRows(t - n, n + 1), u.middleRows(t - n, n + 1), th);
        }
        if (row_scale_.size() > 0) h.array() /= row_scale_.array();
        return h;
    }

    /// Sparse constraint Jacobian with the structural pattern of each row:
    /// dense theta block, then the (input and) trajectory window in column order.
    SparseJacobian constraint_jacobian(const Vector& x) const {
        check_x(x);
        SparseJacobian j(m_, n_vars_, n_theta_, block_);
        const Vector th = theta(x);
        if (variant_ == Variant::StateSpace) {
            j.reserve(static_cast<std::size_t>(m_ * (n_theta_ + 2 * block_)));
            auto xs = trajectory(x);
            const Index s = block_;
            for (Index t = 0; t + 1 < samples(); ++t) {
                const StateJacobians sj =
                    ss_->step_jacobians(xs.row(t).transpose(), data_.inputs().row(t).transpose(), th);
                const Index base = trajectory_offset() + t * s;
                for (Index c = 0; c < s; ++c) {
                    const Index row = t * s + c;
                    const double inv = row_scale_.size() > 0 ? 1.0 / row_scale_(row) : 1.0;
                    for (Index k = 0; k < n_theta_; ++k) j.push(k, -sj.d_params(c, k) * inv);
                    for (Index k = 0; k < s; ++k) j.push(base + k, -sj.d_state(c, k) * inv);
                    for (Index k = 0; k < s; ++k) j.push(base + s + k, (k == c ? 1.0 : 0.0) * inv);
                    j.finish_row();
                }
            }
            return j;
        }

        const Index n = order_, p = block_, q = data_.n_inputs();
        const bool eiv = variant_ == Variant::ErrorsInVariables;
        j.reserve(static_cast<std::size_t>(m_ * (n_theta_ + p * (n + 1) + (eiv ? q * (n + 1) : 0))));
        const RowMatrix u = inputs(x);
        auto y = trajectory(x);
        for (Index t = n; t < samples(); ++t) {
            const LocalJacobians lj = io_->residual_jacobians(y.middleRows(t - n, n + 1), u.middleRows(t - n, n + 1), th);
            const Index ybase = trajectory_offset() + (t - n) * p;
            const Index ubase = n_theta_ + (t - n) * q;
            for (Index c = 0; c < p; ++c) {
                const Index row = (t - n) * p + c;
                const double inv = row_scale_.size() > 0 ? 1.0 / row_scale_(row) : 1.0;
                for (Index k = 0; k < n_theta_; ++k) j.push(k, lj.d_params(c, k) * inv);
                if (eiv)
                    for (Index k = 0; k < q * (n + 1); ++k) j.push(ubase + k, lj.d_inputs(c, k) * inv);
                for (Index k = 0; k < p * (n + 1); ++k) j.push(ybase + k, lj.d_outputs(c, k) * inv);
                j.finish_row();
            }
        }
        return j;
    }

    /// Multipliers lambda solving J_w^T lambda = -grad_w f by back
    /// substitution over the time blocks of the trajectory block.
    Vector recover_multipliers(const Vector& x) const { return recover_multipliers(x, constraint_jacobian(x), cost_and_gradient(x).gradient); }

    Vector recover_multipliers(const Vector&, const SparseJacobian& j, const Vector& grad) const {
        const Index b = block_, w0 = n_free();
        Vector g = -grad.tail(m_);
        Vector lambda = Vector::Zero(m_);
        for (Index blk = m_ / b; blk-- > 0;) {
            const Index r0 = blk * b, c0 = w0 + blk * b;
            Matrix d(b, b);
            for (Index r = 0; r < b; ++r)
                for (Index c = 0; c < b; ++c) d(r, c) = j.coeff(r0 + r, c0 + c);
            const Vector rhs = g.segment(r0, b);
            Vector lb;
            if (d.isIdentity(0.0)) lb = rhs;
            else lb = d.transpose().partialPivLu().solve(rhs);
            lambda.segment(r0, b) = lb;
            for (Index r = 0; r < b; ++r) {
                auto cols = j.row_cols(r0 + r);
                auto vals = j.row_values(r0 + r);
                for (std::size_t e = 0; e < cols.size(); ++e)
                    if (cols[e] >= w0 && cols[e] < c0) g(cols[e] - w0) -= vals[e] * lb(r);
            }
        }
        return lambda;
    }

    /// grad_z f + J_z^T lambda: the gradient of the unconstrained loss with
    /// respect to z = [theta, (u), first trajectory entries] at a feasible x.
    ReducedGradient reduced_gradient(const Vector& x, double feasibility_bound = 1e-8) const {
        const SparseJacobian j = constraint_jacobian(x);
        const Vector grad = cost_and_gradient(x).gradient;
        ReducedGradient r;
        r.infeasibility = inf_norm(constraint_residual(x));
        r.stale = !(r.infeasibility <= feasibility_bound);
        r.multipliers = recover_multipliers(x, j, grad);
        const Vector jtl = multiply_transpose(j, r.multipliers);
        r.gradient = grad.head(n_free()) + jtl.head(n_free());
        return r;
    }

private:
    void init(Vector row_scale) {
        const Index N = data_.size();
        if (N <= order_)
            throw InsufficientDataError("problem: need more than " + std::to_string(order_) + " samples, got " +
                                        std::to_string(N));
        if (w_.output_weight().rows() != data_.n_outputs())
            throw DimensionError("problem: W_y size must equal the number of outputs");
        if (variant_ == Variant::ErrorsInVariables && w_.input_weight().rows() != data_.n_inputs())
            throw DimensionError("problem: W_u size must equal the number of inputs");
        m_ = block_ * (N - order_);
        n_vars_ = n_theta_ + block_ * N + (variant_ == Variant::ErrorsInVariables ? data_.n_inputs() * N : 0);
        if (!(m_ < n_vars_)) throw DimensionError("problem: need fewer constraints than variables");
        if (row_scale.size() > 0) {
            if (row_scale.size() != m_) throw DimensionError("problem: row scale must have one entry per constraint");
            if (!(row_scale.array() > 0.0).all()) throw DimensionError("problem: row scales must be positive");
        }
        row_scale_ = std::move(row_scale);
    }

    void check_theta(const Vector& theta) const {
        if (theta.size() != n_theta_) throw DimensionError("problem: theta has wrong length");
    }
    void check_x(const Vector& x) const {
        if (x.size() != n_vars_)
            throw DimensionError("problem: expected " + std::to_string(n_vars_) + " variables, got " +
                                 std::to_string(x.size()));
    }

    ModelPtr io_;
    StateSpaceModelPtr ss_;
    Dataset data_;
    Weighting w_;
    Variant variant_;
    Index order_ = 0, block_ = 1, n_theta_ = 0, n_vars_ = 0, m_ = 0;
    Vector row_scale_;
};

inline Problem assemble(ModelPtr model, const Dataset& data, const Weighting& weighting,
                        Variant variant = Variant::OutputError, Vector row_scale = {}) {
    return Problem(std::move(model), data, weighting, variant, std::move(row_scale));
}

inline Problem assemble(StateSpaceModelPtr model, const Dataset& data, const Weighting& weighting,
                        Vector row_scale = {}) {
    return Problem(std::move(model), data, weighting, std::move(row_scale));
}

} // namespace semid
