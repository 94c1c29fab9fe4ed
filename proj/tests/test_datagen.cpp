#include "semid/datagen.hpp"
#include "semid/problem.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace semid;

namespace {

std::string to_csv(const Dataset& d) {
    std::ostringstream os;
    csv::write(os, d);
    return os.str();
}

Vector theta_lti(double a, double b) {
    Vector th(2);
    th << a, b;
    return th;
}

} // namespace

TEST(GenLti, ImpulseRollout) {
    const Dataset d = gen_lti(theta_lti(0.5, 2.0), {InputKind::Impulse, 1.0, 1}, 6, 1);
    const double want[] = {0.0, 2.0, 1.0, 0.5, 0.25, 0.125};
    for (Index t = 0; t < 6; ++t) EXPECT_DOUBLE_EQ(d.outputs()(t, 0), want[t]);
    EXPECT_EQ(d.inputs()(0, 0), 1.0);
    EXPECT_EQ(d.inputs().bottomRows(5).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GenLti, ZeroInputAndSeeds) {
    const Dataset z = gen_lti(theta_lti(0.5, 1.0), {InputKind::Zero}, 20, 3);
    EXPECT_EQ(z.outputs().cwiseAbs().maxCoeff(), 0.0);
    const Dataset a = gen_lti(theta_lti(0.5, 1.0), {InputKind::White}, 50, 7);
    const Dataset b = gen_lti(theta_lti(0.5, 1.0), {InputKind::White}, 50, 7);
    const Dataset c = gen_lti(theta_lti(0.5, 1.0), {InputKind::White}, 50, 8);
    EXPECT_EQ(to_csv(a), to_csv(b));
    EXPECT_NE(a.inputs(), c.inputs());
    EXPECT_EQ(a.metadata().at("rng"), kRngId);
    EXPECT_THROW((void)gen_lti(theta_lti(0.5, 1.0), {}, 1, 1), ConfigError);
    const Dataset u = gen_lti(theta_lti(1.01, 1.0), {}, 30, 1);
    EXPECT_EQ(u.metadata().count("warning"), 1u);
}

TEST(Staircase, HoldsLevels) {
    auto rng = make_rng(1, stream::input);
    const RowMatrix u = staircase(250, 2, 100, 1.0, rng);
    for (Index t = 1; t < 250; ++t) {
        if (t % 100 == 0) EXPECT_NE(u(t, 0), u(t - 1, 0));
        else EXPECT_EQ(u.row(t), u.row(t - 1));
    }
}

TEST(WhSystem, ZeroInputGivesZeroOutput) {
    const WhSystem sys;
    const RowMatrix y = sys.simulate(RowMatrix::Zero(300, 2));
    EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(WhSystem, ZohPreservesDcGain) {
    const WhSystem sys;
    const double want[] = {16.0 / 130.0, 80.0 / 2730.0, 3.0, -10.0 / 80.0};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(sys.filters()[i].dc_gain(), want[i], 1e-15);
        EXPECT_NEAR(sys.blocks()[i].dc_gain(), want[i], 1e-12 * std::abs(want[i]));
    }
}

TEST(WhSystem, ConstantInputSettlesToSteadyState) {
    const WhSystem sys;
    const double u1 = 0.7, u2 = -0.4;
    // Slowest pole is the -3 +- 8.5i pair of H4: 10 time constants ~ 3.3 s.
    const Index N = 400;
    const RowMatrix u = RowMatrix::Constant(N, 2, 0.0).rowwise() + Eigen::RowVector2d(u1, u2);
    const RowMatrix z = sys.filter_outputs(u);
    const Eigen::Vector4d zeta = WhSystem::input_nonlinearity(u1, u2);
    const double gains[] = {16.0 / 130.0, 80.0 / 2730.0, 3.0, -10.0 / 80.0};
    Eigen::Vector4d zss;
    for (Index i = 0; i < 4; ++i) {
        zss(i) = gains[i] * zeta(i);
        EXPECT_NEAR(z(N - 1, i), zss(i), 1e-3 * std::abs(zss(i))) << "H" << i + 1;
    }
    const Eigen::Vector2d yss = WhSystem::output_nonlinearity(zss);
    const RowMatrix y = sys.simulate(u);
    EXPECT_NEAR(y(N - 1, 0), yss(0), 1e-3 * std::abs(yss(0)));
    EXPECT_NEAR(y(N - 1, 1), yss(1), 1e-3 * std::abs(yss(1)));
}

TEST(WhSystem, InputNonlinearity) {
    const Eigen::Vector4d z = WhSystem::input_nonlinearity(1.0, 2.0);
    const double z1 = 0.4 - 3.0 - 0.04 * 4.0 * 3.0;
    EXPECT_DOUBLE_EQ(z(0), z1);
    EXPECT_DOUBLE_EQ(z(1), 3.0);
    EXPECT_DOUBLE_EQ(z(2), 4.0 - 1.3 * z1);
    EXPECT_DOUBLE_EQ(z(3), 1.0);
}

TEST(GenWh, ShapeAndDeterminism) {
    const Dataset a = gen_wh_mimo(3500, 11), b = gen_wh_mimo(3500, 11);
    EXPECT_EQ(a.size(), 3500);
    EXPECT_EQ(a.n_inputs(), 2);
    EXPECT_EQ(a.n_outputs(), 2);
    EXPECT_DOUBLE_EQ(a.sample_period(), 0.01);
    EXPECT_EQ(to_csv(a), to_csv(b));
    EXPECT_TRUE(a.outputs().allFinite());
    EXPECT_GT(a.outputs().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AddNoise, IdentityDeterminismAndMoments) {
    const Dataset d = gen_lti(theta_lti(0.5, 1.0), {}, 10000, 1);
    const Dataset same = add_noise(d, NoiseSpec::uniform(0.0, 5));
    EXPECT_EQ(same.outputs(), d.outputs());
    EXPECT_EQ(same.inputs(), d.inputs());

    const double a = 0.3;
    const Dataset n1 = add_noise(d, NoiseSpec::uniform(a, 5)), n2 = add_noise(d, NoiseSpec::uniform(a, 5));
    EXPECT_EQ(to_csv(n1), to_csv(n2));
    EXPECT_EQ(n1.inputs(), d.inputs());
    const Vector e = n1.outputs().col(0) - d.outputs().col(0);
    EXPECT_LE(e.cwiseAbs().maxCoeff(), a);
    const double var = (e.array() - e.mean()).square().sum() / static_cast<double>(e.size());
    EXPECT_NEAR(var, a * a / 3.0, 0.1 * a * a / 3.0);

    const Dataset g = add_noise(d, NoiseSpec::gaussian(0.5, 6));
    const Vector eg = g.outputs().col(0) - d.outputs().col(0);
    EXPECT_NEAR((eg.array() - eg.mean()).square().mean(), 0.25, 0.025);

    NoiseSpec eiv = NoiseSpec::uniform(0.1, 7);
    eiv.eiv = true;
    eiv.input_amplitude = Vector::Constant(1, 0.2);
    const Dataset ne = add_noise(d, eiv);
    const Vector eu = ne.inputs().col(0) - d.inputs().col(0);
    EXPECT_GT(eu.cwiseAbs().maxCoeff(), 0.1);
    EXPECT_LE(eu.cwiseAbs().maxCoeff(), 0.2);

    EXPECT_THROW((void)add_noise(d, NoiseSpec::uniform(-1.0)), ConfigError);
}

TEST(AddNoise, PerChannelAmplitude) {
    const Dataset d = gen_wh_mimo(2000, 2);
    NoiseSpec s = NoiseSpec::uniform(0.0, 1);
    s.amplitude = Eigen::Vector2d(0.0, 1.0);
    const Dataset n = add_noise(d, s);
    EXPECT_EQ(n.outputs().col(0), d.outputs().col(0));
    EXPECT_GT((n.outputs().col(1) - d.outputs().col(1)).cwiseAbs().maxCoeff(), 0.5);
    s.amplitude = Eigen::Vector3d(1.0, 1.0, 1.0);
    EXPECT_THROW((void)add_noise(d, s), DimensionError);
}

TEST(Maglev, FreeFallIsQuadratic) {
    MaglevSetup s;
    s.k0 = 0.0;
    const RowMatrix i = RowMatrix::Zero(30, 1);
    const double z0 = 0.02, ts = s.sample_period, g = s.gravity;
    MaglevSimulator cont(s, MaglevPlant::Continuous);
    const RowMatrix zc = cont.run(i, z0);
    MaglevSimulator disc(s, MaglevPlant::Discrete);
    const RowMatrix zd = disc.run(i, z0);
    for (Index t = 0; t < 30; ++t) {
        const double tt = static_cast<double>(t);
        EXPECT_NEAR(zc(t, 0), z0 + 0.5 * g * tt * tt * ts * ts, 1e-12);
        EXPECT_NEAR(zd(t, 0), z0 + 0.5 * g * ts * ts * tt * std::max(tt - 1.0, 0.0), 1e-12);
    }
}

TEST(Maglev, EquilibriumCurrentHoldsPosition) {
    MaglevSetup s;
    const MaglevModel m;
    const double z0 = 0.02, ieq = m.equilibrium_current(z0, s.km);
    EXPECT_NEAR(s.km * ieq * ieq, s.mass * s.gravity * z0 * z0, 1e-15);
    for (MaglevPlant p : {MaglevPlant::Discrete, MaglevPlant::Continuous}) {
        MaglevSimulator sim(s, p);
        const RowMatrix z = sim.run(RowMatrix::Constant(50, 1, ieq), z0);
        EXPECT_LT((z.array() - z0).abs().maxCoeff(), 1e-12);
    }
}

TEST(Maglev, AbortsWhenBallReachesMagnet) {
    MaglevSetup s;
    MaglevSimulator sim(s, MaglevPlant::Continuous);
    EXPECT_THROW((void)sim.run(RowMatrix::Constant(200, 1, 3.0), 0.02), DivergedSimulationError);
    MaglevSimulator disc(s, MaglevPlant::Discrete);
    EXPECT_THROW((void)disc.run(RowMatrix::Constant(200, 1, 3.0), 0.02), DivergedSimulationError);
}

TEST(GenMaglev, DiscreteTruthIsFeasible) {
    const Dataset d = gen_maglev(200, 3, NoiseSpec::uniform(0.0));
    EXPECT_EQ(d.size(), 200);
    EXPECT_DOUBLE_EQ(d.sample_period(), 0.01);
    EXPECT_GT(d.outputs().minCoeff(), 0.015);
    EXPECT_LT(d.outputs().maxCoeff(), 0.025);
    auto model = std::make_shared<MaglevModel>();
    Problem pr = assemble(model, d, Weighting::identity(1, 1));
    Vector th(2);
    th << MaglevModel::kTrueKm, MaglevModel::kTrueK0;
    const Vector x = pr.initial_guess(th);
    const Vector h = pr.constraint_residual(x);
    EXPECT_LT(inf_norm(h), 1e-15);
    EXPECT_GT(inf_norm(pr.constraint_residual(pr.initial_guess(1.05 * th))), 1e-7);
}

TEST(GenMaglev, NoiseAndDeterminism) {
    const Dataset clean = gen_maglev(200, 4, NoiseSpec::uniform(0.0));
    const Dataset a = gen_maglev(200, 4), b = gen_maglev(200, 4), c = gen_maglev(200, 5);
    EXPECT_EQ(to_csv(a), to_csv(b));
    EXPECT_NE(a.outputs(), c.outputs());
    EXPECT_EQ(a.inputs(), clean.inputs());
    const Vector e = a.outputs().col(0) - clean.outputs().col(0);
    EXPECT_LE(e.cwiseAbs().maxCoeff(), 5e-3);
    EXPECT_GT(e.cwiseAbs().maxCoeff(), 4e-3);
    const Dataset cont = gen_maglev(200, 4, NoiseSpec::uniform(0.0), MaglevPlant::Continuous);
    EXPECT_GT(cont.outputs().minCoeff(), 0.015);
    EXPECT_LT(cont.outputs().maxCoeff(), 0.025);
    EXPECT_LT((cont.outputs() - clean.outputs()).cwiseAbs().maxCoeff(), 2e-3);
}
