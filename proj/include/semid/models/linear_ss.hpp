#pragma once

#include "semid/model.hpp"

namespace semid {

/// x_{t+1} = A x_t + B u_t, y_t = C x_t with theta = [vec(A), vec(B), vec(C)]
/// (each row-major).
class LinearStateSpaceModel final : public StateSpaceModel {
public:
    LinearStateSpaceModel(Index state_dim, Index n_inputs, Index n_outputs)
        : s_(state_dim), q_(n_inputs), p_(n_outputs) {
        if (s_ < 1 || q_ < 1 || p_ < 1) throw DimensionError("linear_ss: dimensions must be positive");
    }

    std::string name() const override { return "linear_ss"; }
    Index state_dim() const override { return s_; }
    Index n_outputs() const override { return p_; }
    Index n_inputs() const override { return q_; }
    Index n_params() const override { return s_ * s_ + s_ * q_ + p_ * s_; }

    static Vector pack(const Matrix& a, const Matrix& b, const Matrix& c) {
        Vector theta(a.size() + b.size() + c.size());
        Index pos = 0;
        for (const Matrix* m : {&a, &b, &c}) {
            RowMatrix r = *m;
            theta.segment(pos, r.size()) = Eigen::Map<const Vector>(r.data(), r.size());
            pos += r.size();
        }
        return theta;
    }

    Vector step(const Vector& x, const Vector& u, const Vector& theta) const override {
        return a(theta) * x + b(theta) * u;
    }

    StateJacobians step_jacobians(const Vector& x, const Vector& u, const Vector& theta) const override {
        StateJacobians j;
        j.d_state = a(theta);
        j.d_input = b(theta);
        j.d_params = RowMatrix::Zero(s_, n_params());
        for (Index r = 0; r < s_; ++r) {
            j.d_params.row(r).segment(r * s_, s_) = x.transpose();
            j.d_params.row(r).segment(s_ * s_ + r * q_, q_) = u.transpose();
        }
        return j;
    }

    Vector output(const Vector& x, const Vector&, const Vector& theta) const override { return c(theta) * x; }

    StateJacobians output_jacobians(const Vector& x, const Vector&, const Vector& theta) const override {
        StateJacobians j;
        j.d_state = c(theta);
        j.d_input = RowMatrix::Zero(p_, q_);
        j.d_params = RowMatrix::Zero(p_, n_params());
        for (Index r = 0; r < p_; ++r) j.d_params.row(r).segment(s_ * s_ + s_ * q_ + r * s_, s_) = x.transpose();
        return j;
    }

    Eigen::Map<const RowMatrix> a(const Vector& theta) const { return {theta.data(), s_, s_}; }
    Eigen::Map<const RowMatrix> b(const Vector& theta) const { return {theta.data() + s_ * s_, s_, q_}; }
    Eigen::Map<const RowMatrix> c(const Vector& theta) const { return {theta.data() + s_ * s_ + s_ * q_, p_, s_}; }

private:
    Index s_, q_, p_;
};

} // namespace semid
