#pragma once

#include "semid/model.hpp"

namespace semid {

/// Euler-discretized magnetic levitation model with unknown magnet constants
/// theta = (k_m [H m], k_0 [N m]):
///
///   m z_{t-2}^2 ((z_t - 2 z_{t-1} + z_{t-2}) / Ts^2 - g) + k_m i_{t-2}^2 + k_0 = 0
///
/// The constraint is kept in this implicit residual form; `evaluate` solves
/// it for z_t (needed by free-run simulation and the gradient baselines).
/// Output is the ball position z [m], input the coil current i [A].
class MaglevModel final : public Model {
public:
    static constexpr double kDefaultMass = 24.197e-3; // kg
    static constexpr double kGravity = 9.81;           // m/s^2
    static constexpr double kDefaultSamplePeriod = 0.01;
    static constexpr double kTrueKm = 2.1039e-4;
    static constexpr double kTrueK0 = 0.0;

    explicit MaglevModel(double mass = kDefaultMass, double sample_period = kDefaultSamplePeriod,
                         double gravity = kGravity)
        : mass_(mass), ts_(sample_period), g_(gravity) {
        if (!(mass_ > 0.0) || !(ts_ > 0.0)) throw DimensionError("maglev: mass and sample period must be positive");
    }

    std::string name() const override { return "maglev"; }
    Index order() const override { return 2; }
    Index n_outputs() const override { return 1; }
    Index n_inputs() const override { return 1; }
    Index n_params() const override { return 2; }
    bool linear_in_params() const override { return true; }

    /// k_m log-uniform on [1e-5, 1e-3] H m, k_0 = 0.
    Vector initial_params(std::mt19937_64& rng) const override {
        std::uniform_real_distribution<double> ud(-5.0, -3.0);
        Vector theta(2);
        theta << std::pow(10.0, ud(rng)), 0.0;
        return theta;
    }

    double mass() const { return mass_; }
    double sample_period() const { return ts_; }
    double gravity() const { return g_; }

    /// Coil current holding the ball at rest at height z.
    double equilibrium_current(double z, double km, double k0 = 0.0) const {
        return std::sqrt((mass_ * g_ * z * z - k0) / km);
    }

    /// Magnitude of dh/dz_t at height z, a natural per-row constraint scale.
    double residual_scale(double z) const { return mass_ / (ts_ * ts_) * z * z; }

protected:
    // Window rows are oldest-first: lagged = (z_{t-2}, z_{t-1}), inputs = (i_{t-2}, i_{t-1}, i_t).
    Vector do_evaluate(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        const double z2 = lagged(0, 0), z1 = lagged(1, 0), i2 = inputs(0, 0);
        Vector z(1);
        z(0) = 2.0 * z1 - z2 + ts_ * ts_ * (g_ - (theta(0) * i2 * i2 + theta(1)) / (mass_ * z2 * z2));
        return z;
    }

    LocalJacobians do_jacobians(ConstRowBlock lagged, ConstRowBlock inputs, const Vector& theta) const override {
        const double z2 = lagged(0, 0), i2 = inputs(0, 0);
        const double ts2 = ts_ * ts_;
        const double force = theta(0) * i2 * i2 + theta(1);
        LocalJacobians j;
        j.d_outputs.resize(1, 2);
        j.d_outputs << -1.0 + 2.0 * ts2 * force / (mass_ * z2 * z2 * z2), 2.0;
        j.d_inputs = RowMatrix::Zero(1, 3);
        j.d_inputs(0, 0) = -2.0 * ts2 * theta(0) * i2 / (mass_ * z2 * z2);
        j.d_params.resize(1, 2);
        j.d_params << -ts2 * i2 * i2 / (mass_ * z2 * z2), -ts2 / (mass_ * z2 * z2);
        return j;
    }

    Vector do_residual(ConstRowBlock window, ConstRowBlock inputs, const Vector& theta) const override {
        const double z2 = window(0, 0), z1 = window(1, 0), z0 = window(2, 0), i2 = inputs(0, 0);
        Vector h(1);
        h(0) = mass_ * z2 * z2 * ((z0 - 2.0 * z1 + z2) / (ts_ * ts_) - g_) + theta(0) * i2 * i2 + theta(1);
        return h;
    }

    LocalJacobians do_residual_jacobians(ConstRowBlock window, ConstRowBlock inputs,
                                         const Vector& theta) const override {
        const double z2 = window(0, 0), z1 = window(1, 0), z0 = window(2, 0), i2 = inputs(0, 0);
        const double c = mass_ / (ts_ * ts_);
        LocalJacobians j;
        j.d_outputs.resize(1, 3);
        j.d_outputs << c * z2 * (2.0 * z0 - 4.0 * z1 + 3.0 * z2) - 2.0 * mass_ * g_ * z2, // d/dz_{t-2}
            -2.0 * c * z2 * z2,                                                             // d/dz_{t-1}
            c * z2 * z2;                                                                    // d/dz_t
        j.d_inputs = RowMatrix::Zero(1, 3);
        j.d_inputs(0, 0) = 2.0 * theta(0) * i2;
        j.d_params.resize(1, 2);
        j.d_params << i2 * i2, 1.0;
        return j;
    }

private:
    double mass_, ts_, g_;
};

} // namespace semid
