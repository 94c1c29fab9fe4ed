#pragma once

#include "semid/dataset.hpp"
#include "semid/error.hpp"
#include "semid/models/lti.hpp"
#include "semid/models/maglev.hpp"
#include "semid/rng.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace semid {

enum class InputKind { Impulse, Zero, White, Staircase };

inline InputKind parse_input_kind(const std::string& s) {
    if (s == "impulse") return InputKind::Impulse;
    if (s == "zero") return InputKind::Zero;
    if (s == "white") return InputKind::White;
    if (s == "staircase") return InputKind::Staircase;
    throw ConfigError("unknown input kind '" + s + "' (expected impulse, zero, white or staircase)");
}

inline std::string to_string(InputKind k) {
    switch (k) {
    case InputKind::Impulse: return "impulse";
    case InputKind::Zero: return "zero";
    case InputKind::White: return "white";
    case InputKind::Staircase: return "staircase";
    }
    return "?";
}

/// Excitation signal: impulse of height `amplitude` at t = 0, zero, white
/// Gaussian with standard deviation `amplitude`, or a staircase holding
/// N(0, amplitude^2) levels for `stair_length` samples.
struct InputSpec {
    InputKind kind = InputKind::White;
    double amplitude = 1.0;
    Index stair_length = 100;
};

/// Staircase with independent N(0, sigma^2) levels per channel and stair.
inline RowMatrix staircase(Index N, Index channels, Index stair_length, double sigma, std::mt19937_64& rng) {
    if (stair_length < 1) throw ConfigError("staircase: stair length must be at least 1");
    std::normal_distribution<double> nd(0.0, 1.0);
    RowMatrix u(N, channels);
    for (Index t = 0; t < N; ++t) {
        if (t % stair_length == 0)
            for (Index c = 0; c < channels; ++c) u(t, c) = sigma * nd(rng);
        else
            u.row(t) = u.row(t - 1);
    }
    return u;
}

inline RowMatrix make_input(const InputSpec& spec, Index N, Index channels, std::uint64_t seed) {
    auto rng = make_rng(seed, stream::input);
    switch (spec.kind) {
    case InputKind::Zero: return RowMatrix::Zero(N, channels);
    case InputKind::Impulse: {
        RowMatrix u = RowMatrix::Zero(N, channels);
        if (N > 0) u.row(0).setConstant(spec.amplitude);
        return u;
    }
    case InputKind::White: {
        std::normal_distribution<double> nd(0.0, 1.0);
        RowMatrix u(N, channels);
        for (Index i = 0; i < u.size(); ++i) u.data()[i] = spec.amplitude * nd(rng);
        return u;
    }
    case InputKind::Staircase: return staircase(N, channels, spec.stair_length, spec.amplitude, rng);
    }
    return {};
}

/// Noiseless first-order LTI record from y_1 = 0. An unstable truth
/// (|theta_1| >= 1) still produces data; the metadata carries a warning.
inline Dataset gen_lti(const Vector& theta, const InputSpec& input, Index N, std::uint64_t seed) {
    if (N < 2) throw ConfigError("gen_lti: need N >= 2");
    if (theta.size() != 2) throw DimensionError("gen_lti: theta must have two entries");
    const RowMatrix u = make_input(input, N, 1, seed);
    RowMatrix y = simulate_free_run(LtiFirstOrder{}, theta, RowMatrix::Zero(1, 1), u);
    Dataset d(u, std::move(y), 1.0);
    auto& md = d.metadata();
    md["generator"] = "lti";
    md["seed"] = std::to_string(seed);
    md["rng"] = kRngId;
    md["theta"] = csv::format(theta(0), 17) + " " + csv::format(theta(1), 17);
    md["input"] = to_string(input.kind);
    md["input_amplitude"] = csv::format(input.amplitude, 17);
    if (std::abs(theta(0)) >= 1.0) md["warning"] = "unstable truth (|theta_1| >= 1)";
    return d;
}

/// Strictly proper continuous transfer function num(s) / den(s), coefficients
/// in descending powers, den monic.
struct TransferFunction {
    std::vector<double> num;
    std::vector<double> den;

    Index order() const { return static_cast<Index>(den.size()) - 1; }

    double dc_gain() const { return num.back() / den.back(); }

    /// Controllable canonical realization (A, B, C).
    void realize(Matrix& a, Vector& b, Matrix& c) const {
        const Index n = order();
        a = Matrix::Zero(n, n);
        for (Index i = 0; i + 1 < n; ++i) a(i, i + 1) = 1.0;
        for (Index j = 0; j < n; ++j) a(n - 1, j) = -den[static_cast<std::size_t>(n - j)];
        b = Vector::Zero(n);
        b(n - 1) = 1.0;
        c = Matrix::Zero(1, n);
        const Index m = static_cast<Index>(num.size());
        for (Index j = 0; j < m; ++j) c(0, j) = num[static_cast<std::size_t>(m - 1 - j)];
    }
};

/// Zero-order-hold discretization x+ = Ad x + Bd u, z = C x.
struct DiscreteBlock {
    Matrix ad;
    Vector bd;
    Matrix c;

    double dc_gain() const { return (c * (Matrix::Identity(ad.rows(), ad.cols()) - ad).partialPivLu().solve(bd))(0); }
};

inline DiscreteBlock zoh(const TransferFunction& tf, double ts) {
    Matrix a, c;
    Vector b;
    tf.realize(a, b, c);
    const Index n = a.rows();
    Matrix aug = Matrix::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = a * ts;
    aug.topRightCorner(n, 1) = b * ts;
    const Matrix e = aug.exp();
    return {e.topLeftCorner(n, n), e.topRightCorner(n, 1), c};
}

/// Two-input, two-output Wiener-Hammerstein benchmark: static input
/// nonlinearity u -> zeta, four SISO filters zeta_i -> z_i, static output
/// nonlinearity z -> y.
class WhSystem {
public:
    static constexpr double kSamplePeriod = 0.01;

    explicit WhSystem(double sample_period = kSamplePeriod) : ts_(sample_period) {
        if (!(ts_ > 0.0)) throw ConfigError("wh: sample period must be positive");
        filters_ = {TransferFunction{{16.0}, {1.0, 40.0, 130.0}},
                    TransferFunction{{80.0}, {1.0, 31.0, 340.0, 2730.0}},
                    TransferFunction{{30.0}, {1.0, 10.0}},
                    TransferFunction{{-10.0}, {1.0, 6.0, 80.0}}};
        for (std::size_t i = 0; i < filters_.size(); ++i) {
            const auto& f = filters_[i];
            if (f.num.size() >= f.den.size())
                throw ConfigError("wh: filter H" + std::to_string(i + 1) + " is not strictly proper");
            Matrix a, c;
            Vector b;
            f.realize(a, b, c);
            const Eigen::VectorXcd poles = a.eigenvalues();
            for (Index k = 0; k < poles.size(); ++k)
                if (!(poles(k).real() < 0.0))
                    throw ConfigError("wh: filter H" + std::to_string(i + 1) + " is not Hurwitz stable");
            blocks_[i] = zoh(f, ts_);
        }
    }

    double sample_period() const { return ts_; }
    const std::array<TransferFunction, 4>& filters() const { return filters_; }
    const std::array<DiscreteBlock, 4>& blocks() const { return blocks_; }

    static Eigen::Vector4d input_nonlinearity(double u1, double u2) {
        const double z1 = 0.2 * u1 * u2 - u1 - u2 - 0.04 * u2 * u2 * (u2 + u1);
        return {z1, u1 + u2, 2.0 * u2 - 1.3 * z1, u1};
    }

    static Eigen::Vector2d output_nonlinearity(const Eigen::Vector4d& z) {
        return {7.5 * z(3) * z(0) - 51.0 * z(1) + 1.02 * z(3) * z(3) * z(1) - 9.0 * z(0) * z(0) * z(0),
                2.7 * z(1) * z(2) - 0.729 * z(3) * z(1) * z(1)};
    }

    /// Filter outputs z_t for every sample (N x 4), zero initial state.
    RowMatrix filter_outputs(const ConstRowBlock& u) const {
        if (u.cols() != 2) throw DimensionError("wh: expected two input channels");
        std::array<Vector, 4> x;
        for (std::size_t i = 0; i < 4; ++i) x[i] = Vector::Zero(blocks_[i].ad.rows());
        RowMatrix z(u.rows(), 4);
        for (Index t = 0; t < u.rows(); ++t) {
            const Eigen::Vector4d zeta = input_nonlinearity(u(t, 0), u(t, 1));
            for (std::size_t i = 0; i < 4; ++i) {
                const auto& blk = blocks_[i];
                z(t, static_cast<Index>(i)) = (blk.c * x[i])(0);
                x[i] = blk.ad * x[i] + blk.bd * zeta(static_cast<Index>(i));
            }
        }
        return z;
    }

    RowMatrix simulate(const ConstRowBlock& u) const {
        const RowMatrix z = filter_outputs(u);
        RowMatrix y(u.rows(), 2);
        for (Index t = 0; t < u.rows(); ++t) y.row(t) = output_nonlinearity(z.row(t).transpose()).transpose();
        return y;
    }

private:
    double ts_;
    std::array<TransferFunction, 4> filters_;
    std::array<DiscreteBlock, 4> blocks_;
};

/// Noiseless WH record driven by a unit-variance staircase of 100-sample stairs.
inline Dataset gen_wh_mimo(Index N, std::uint64_t seed, Index stair_length = 100) {
    if (N < 1) throw ConfigError("gen_wh_mimo: need N >= 1");
    const WhSystem sys;
    auto rng = make_rng(seed, stream::input);
    RowMatrix u = staircase(N, 2, stair_length, 1.0, rng);
    RowMatrix y = sys.simulate(u);
    Dataset d(std::move(u), std::move(y), sys.sample_period());
    auto& md = d.metadata();
    md["generator"] = "wh";
    md["seed"] = std::to_string(seed);
    md["rng"] = kRngId;
    md["stair_length"] = std::to_string(stair_length);
    return d;
}

enum class NoiseKind { Uniform, Gaussian };

inline NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "uniform") return NoiseKind::Uniform;
    if (s == "gaussian") return NoiseKind::Gaussian;
    throw ConfigError("unknown noise kind '" + s + "' (expected uniform or gaussian)");
}

inline std::string to_string(NoiseKind k) { return k == NoiseKind::Uniform ? "uniform" : "gaussian"; }

/// Additive measurement noise: uniform on [-a, a] or N(0, a^2) per channel.
/// A single amplitude applies to every channel. With `eiv` set the inputs
/// receive independent noise of `input_amplitude` too. An unset seed means
/// "use the generator's seed".
struct NoiseSpec {
    NoiseKind kind = NoiseKind::Uniform;
    Vector amplitude = Vector::Zero(1);
    std::optional<std::uint64_t> seed;
    bool eiv = false;
    Vector input_amplitude = Vector::Zero(1);

    static NoiseSpec uniform(double a, std::optional<std::uint64_t> seed = {}) {
        return {NoiseKind::Uniform, Vector::Constant(1, a), seed, false, Vector::Zero(1)};
    }
    static NoiseSpec gaussian(double sigma, std::optional<std::uint64_t> seed = {}) {
        return {NoiseKind::Gaussian, Vector::Constant(1, sigma), seed, false, Vector::Zero(1)};
    }

    void validate() const {
        if (amplitude.size() == 0 || (amplitude.array() < 0.0).any() || !amplitude.allFinite())
            throw ConfigError("noise: amplitudes must be finite and nonnegative");
        if (eiv && (input_amplitude.size() == 0 || (input_amplitude.array() < 0.0).any() || !input_amplitude.allFinite()))
            throw ConfigError("noise: input amplitudes must be finite and nonnegative");
    }
};

namespace detail {

inline double channel_amplitude(const Vector& a, Index c, Index channels, const char* what) {
    if (a.size() == 1) return a(0);
    if (a.size() != channels)
        throw DimensionError(std::string("noise: ") + what + " amplitude has " + std::to_string(a.size()) +
                             " entries for " + std::to_string(channels) + " channels");
    return a(c);
}

inline void perturb(RowMatrix& x, NoiseKind kind, const Vector& amp, std::mt19937_64& rng, const char* what) {
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Index t = 0; t < x.rows(); ++t)
        for (Index c = 0; c < x.cols(); ++c) {
            const double a = channel_amplitude(amp, c, x.cols(), what);
            const double r = kind == NoiseKind::Uniform ? ud(rng) : nd(rng);
            x(t, c) += a * r;
        }
}

} // namespace detail

inline Dataset add_noise(const Dataset& d, const NoiseSpec& spec, std::uint64_t default_seed = 0) {
    spec.validate();
    const std::uint64_t seed = spec.seed.value_or(default_seed);
    RowMatrix y = d.outputs(), u = d.inputs();
    auto rng = make_rng(seed, stream::noise);
    detail::perturb(y, spec.kind, spec.amplitude, rng, "output");
    if (spec.eiv) {
        auto rng_u = make_rng(seed, stream::input_noise);
        detail::perturb(u, spec.kind, spec.input_amplitude, rng_u, "input");
    }
    Dataset out(std::move(u), std::move(y), d.sample_period());
    out.metadata() = d.metadata();
    auto& md = out.metadata();
    md["noise"] = to_string(spec.kind);
    md["noise_seed"] = std::to_string(seed);
    std::string amps;
    for (Index c = 0; c < spec.amplitude.size(); ++c) amps += (c ? " " : "") + csv::format(spec.amplitude(c), 17);
    md["noise_amplitude"] = amps;
    if (spec.eiv) md["noise_eiv"] = "1";
    return out;
}

enum class MaglevPlant { Discrete, Continuous };

inline MaglevPlant parse_maglev_plant(const std::string& s) {
    if (s == "discrete") return MaglevPlant::Discrete;
    if (s == "continuous") return MaglevPlant::Continuous;
    throw ConfigError("unknown maglev plant '" + s + "' (expected discrete or continuous)");
}

inline std::string to_string(MaglevPlant p) { return p == MaglevPlant::Discrete ? "discrete" : "continuous"; }

/// Plant constants and the excitation: a PD position loop (gains kp [A/m],
/// kd [A s/m]) around the equilibrium current tracks a staircase reference
/// z_ref (1 + U(-perturbation, perturbation)) with stairs of `stair_length`
/// samples. The loop is needed because the open-loop plant is unstable.
struct MaglevSetup {
    double km = MaglevModel::kTrueKm;
    double k0 = MaglevModel::kTrueK0;
    double mass = MaglevModel::kDefaultMass;
    double gravity = MaglevModel::kGravity;
    double sample_period = MaglevModel::kDefaultSamplePeriod;
    double z_ref = 0.02;
    double perturbation = 0.1;
    Index stair_length = 20;
    double kp = 48.0;
    double kd = 1.05;
    Index substeps = 10;
};

/// Rolls the plant under a given current profile from rest at z0 (two equal
/// initial samples for the discrete plant). Aborts with
/// DivergedSimulationError when z reaches 0.
class MaglevSimulator {
public:
    MaglevSimulator(const MaglevSetup& setup, MaglevPlant plant) : s_(setup), plant_(plant) {
        if (!(s_.mass > 0.0) || !(s_.sample_period > 0.0) || s_.substeps < 1)
            throw ConfigError("maglev: mass, sample period and substeps must be positive");
    }

    void reset(double z0) {
        z_prev_ = z_ = z0;
        v_ = 0.0;
        i_prev_ = 0.0;
        started_ = false;
        step_ = 0;
    }

    /// Advances one sample: returns z_{t+1} given the current i_t applied over
    /// [t, t+1). The discrete plant is the Euler recursion of MaglevModel,
    /// in which i_t first acts on z_{t+2}.
    double advance(double current) {
        const double ts = s_.sample_period;
        double next;
        if (plant_ == MaglevPlant::Discrete) {
            next = started_ ? 2.0 * z_ - z_prev_ + ts * ts * (s_.gravity - force(i_prev_) / (s_.mass * z_prev_ * z_prev_))
                            : z_;
            i_prev_ = current;
        } else {
            const double h = ts / static_cast<double>(s_.substeps);
            double z = z_, v = v_;
            auto acc = [&](double zz) { return s_.gravity - force(current) / (s_.mass * zz * zz); };
            for (Index k = 0; k < s_.substeps; ++k) {
                const double k1z = v, k1v = acc(z);
                const double k2z = v + 0.5 * h * k1v, k2v = acc(z + 0.5 * h * k1z);
                const double k3z = v + 0.5 * h * k2v, k3v = acc(z + 0.5 * h * k2z);
                const double k4z = v + h * k3v, k4v = acc(z + h * k3z);
                z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
                v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
                if (!(z > 0.0)) break;
            }
            v_ = v;
            next = z;
        }
        started_ = true;
        ++step_;
        z_prev_ = z_;
        z_ = next;
        if (!(next > 0.0) || !std::isfinite(next))
            throw DivergedSimulationError(static_cast<std::size_t>(step_),
                                          "maglev: ball reached the magnet (z <= 0) at sample " +
                                              std::to_string(step_) + "; simulation aborted");
        return next;
    }

    RowMatrix run(const ConstRowBlock& current, double z0) {
        reset(z0);
        RowMatrix z(current.rows(), 1);
        for (Index t = 0; t < current.rows(); ++t) {
            z(t, 0) = z_;
            if (t + 1 < current.rows()) advance(current(t, 0));
        }
        return z;
    }

    double position() const { return z_; }
    double velocity_estimate() const { return (z_ - z_prev_) / s_.sample_period; }

private:
    double force(double i) const { return s_.km * i * i + s_.k0; }

    MaglevSetup s_;
    MaglevPlant plant_;
    double z_ = 0.0, z_prev_ = 0.0, v_ = 0.0, i_prev_ = 0.0;
    bool started_ = false;
    Index step_ = 0;
};

/// Closed-loop maglev record (current in A, position in m) with measurement
/// noise (default uniform +-5 mm) drawn from the noise stream of `seed`
/// unless the spec carries its own seed.
inline Dataset gen_maglev(Index N, std::uint64_t seed, const NoiseSpec& noise = NoiseSpec::uniform(5e-3),
                          MaglevPlant plant = MaglevPlant::Discrete, const MaglevSetup& setup = {}) {
    if (N < 3) throw ConfigError("gen_maglev: need N >= 3");
    if (!(setup.z_ref > 0.0) || !(setup.perturbation >= 0.0 && setup.perturbation < 1.0) || setup.stair_length < 1)
        throw ConfigError("gen_maglev: invalid reference (z_ref > 0, 0 <= perturbation < 1, stair_length >= 1)");
    auto rng = make_rng(seed, stream::input);
    std::uniform_real_distribution<double> ud(-setup.perturbation, setup.perturbation);
    const MaglevModel model(setup.mass, setup.sample_period, setup.gravity);
    auto eq_current = [&](double z) { return model.equilibrium_current(z, setup.km, setup.k0); };

    MaglevSimulator sim(setup, plant);
    sim.reset(setup.z_ref);
    RowMatrix i(N, 1), z(N, 1);
    double ref = setup.z_ref;
    for (Index t = 0; t < N; ++t) {
        if (t % setup.stair_length == 0) ref = setup.z_ref * (1.0 + ud(rng));
        z(t, 0) = sim.position();
        const double err = z(t, 0) - ref;
        i(t, 0) = eq_current(ref) + setup.kp * err + setup.kd * (t > 0 ? sim.velocity_estimate() : 0.0);
        if (t + 1 < N) sim.advance(i(t, 0));
    }
    Dataset clean(std::move(i), std::move(z), setup.sample_period);
    auto& md = clean.metadata();
    md["generator"] = "maglev";
    md["plant"] = to_string(plant);
    md["seed"] = std::to_string(seed);
    md["rng"] = kRngId;
    md["km"] = csv::format(setup.km, 17);
    md["k0"] = csv::format(setup.k0, 17);
    md["mass"] = csv::format(setup.mass, 17);
    md["z_ref"] = csv::format(setup.z_ref, 17);
    return add_noise(clean, noise, seed);
}

} // namespace semid
