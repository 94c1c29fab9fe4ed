#include "semid/flcmo.hpp"
#include "semid/models/lti.hpp"
#include "semid/models/maglev.hpp"

#include <gtest/gtest.h>

using namespace semid;

namespace {

Dataset lti_data(Index N, std::uint64_t seed, double noise = 0.0) {
    auto rng = make_rng(seed, stream::input);
    std::normal_distribution<double> nd;
    RowMatrix u(N, 1);
    for (Index t = 0; t < N; ++t) u(t, 0) = nd(rng);
    Vector th(2);
    th << 0.5, 1.0;
    RowMatrix y = simulate_free_run(LtiFirstOrder{}, th, RowMatrix::Zero(1, 1), u);
    for (Index t = 0; t < N; ++t) y(t, 0) += noise * nd(rng);
    return Dataset(u, y, 1.0);
}

Problem lti_problem(Index N, std::uint64_t seed, double noise = 0.0) {
    return assemble(std::make_shared<LtiFirstOrder>(), lti_data(N, seed, noise), Weighting::identity(1, 1));
}

} // namespace

TEST(SolverConfig, Validation) {
    SolverConfig c;
    EXPECT_NO_THROW(c.validate());
    c.step = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SolverConfig{};
    c.gain = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SolverConfig{};
    c.tol_constraint = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SolverConfig{};
    c.max_iters = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(FlcmoStep, EquilibriumIsPreserved) {
    Problem pr = lti_problem(30, 1);
    Vector th(2);
    th << 0.5, 1.0;
    const Vector x = pr.rollout_point(th, pr.data().outputs().topRows(1));
    auto [next, d] = flcmo_step(pr, x, SolverConfig{});
    EXPECT_LT((next - x).norm(), 1e-12);
    EXPECT_LT(d.dx_norm, 1e-12);
}

TEST(FlcmoStep, FeasiblePointProjectsGradientOntoNullSpace) {
    Problem pr = lti_problem(12, 2, 0.2);
    Vector th(2);
    th << 0.3, 0.7;
    const Vector x = pr.rollout_point(th, pr.data().outputs().topRows(1));
    const Matrix j = pr.constraint_jacobian(x).to_dense();
    const Vector g = pr.cost_and_gradient(x).gradient;
    const Matrix proj = Matrix::Identity(x.size(), x.size()) - j.transpose() * (j * j.transpose()).inverse() * j;
    const Vector want = proj * (-g);
    const StepDiagnostics d = flcmo_direction(pr, x, SolverConfig{});
    EXPECT_LT((d.dx - want).norm() / want.norm(), 1e-10);
}

TEST(FlcmoStep, MatchesDenseOracle) {
    Problem pr = lti_problem(4, 3);
    Vector x(6);
    x << 0.2, -0.4, 0.1, 0.5, -0.3, 0.8;
    SolverConfig c;
    c.gain = 3.0;
    c.step = 0.05;
    const Matrix j = pr.constraint_jacobian(x).to_dense();
    const Vector g = pr.cost_and_gradient(x).gradient, h = pr.constraint_residual(x);
    const Vector sigma = (j * j.transpose()).partialPivLu().solve(c.gain * h - j * g);
    const Vector want = x + c.step * (-g - j.transpose() * sigma);
    auto [next, d] = flcmo_step(pr, x, c);
    EXPECT_LT((next - want).norm() / want.norm(), 1e-12);
    EXPECT_LT((d.sigma - sigma).norm() / sigma.norm(), 1e-12);
    const Vector hdot = j * (next - x) / c.step;
    EXPECT_LT((hdot + c.gain * h).norm() / h.norm(), 1e-10);
}

TEST(FlcmoStep, NoisyKktPointIsAnEquilibrium) {
    Problem pr = lti_problem(25, 10, 0.3);
    SolverConfig c;
    c.max_iters = 50000;
    const SolveResult r = solve(pr, initial_point(pr, 1), c);
    ASSERT_EQ(r.status, SolveStatus::Converged) << r.message;
    const Vector lambda = pr.recover_multipliers(r.x);
    EXPECT_GT(lambda.norm(), 1e-2);
    const StepDiagnostics d = flcmo_direction(pr, r.x, c);
    EXPECT_LT((d.sigma - lambda).norm() / lambda.norm(), 1e-5);
    EXPECT_TRUE(verify_stationarity(pr, r.x, c).pass);
}

TEST(Solve, RecoversNoiselessLti) {
    Problem pr = lti_problem(200, 4);
    SolverConfig c;
    c.max_iters = 20000;
    const SolveResult r = solve(pr, initial_point(pr, 4), c);
    ASSERT_EQ(r.status, SolveStatus::Converged) << r.message;
    EXPECT_LT(std::abs(r.x(0) - 0.5), 1e-4);
    EXPECT_LT(std::abs(r.x(1) - 1.0), 1e-4);
    EXPECT_LT(r.trace.back().h_norm, c.tol_constraint);
    EXPECT_EQ(static_cast<long>(r.trace.size()), r.iterations + 1);
    const StationarityReport rep = verify_stationarity(pr, r.x, c);
    EXPECT_TRUE(rep.pass);
    EXPECT_LT(rep.h_inf, 1e-6);
    EXPECT_LT(rep.reduced_gradient_inf, 1e-6);
    EXPECT_LT(rep.lagrangian_gradient_inf, 1e-6);
}

TEST(Solve, IsDeterministic) {
    Problem pr = lti_problem(40, 5, 0.05);
    SolverConfig c;
    c.max_iters = 300;
    const SolveResult a = solve(pr, initial_point(pr, 9), c), b = solve(pr, initial_point(pr, 9), c);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.iterations, b.iterations);
    EXPECT_EQ(a.status, SolveStatus::MaxIters);
    EXPECT_EQ(a.iterations, 300);
}

TEST(Solve, DenseFallbackTracksSparsePath) {
    Problem pr = lti_problem(60, 6, 0.1);
    SolverConfig c;
    c.max_iters = 50;
    SolverConfig cd = c;
    cd.dense_fallback = true;
    Vector xs = initial_point(pr, 6), xd = xs;
    for (int k = 0; k < 50; ++k) {
        xs = flcmo_step(pr, xs, c).first;
        xd = flcmo_step(pr, xd, cd).first;
        ASSERT_LT((xs - xd).norm() / xs.norm(), 1e-8) << "iteration " << k;
    }
}

TEST(Solve, ReportsDivergence) {
    Problem pr = lti_problem(40, 7, 0.1);
    SolverConfig c;
    c.step = 50.0;
    c.gain = 10.0;
    c.max_iters = 5000;
    const SolveResult r = solve(pr, initial_point(pr, 7), c);
    EXPECT_EQ(r.status, SolveStatus::Diverged);
    EXPECT_FALSE(r.message.empty());
}

TEST(Solve, ReportsRankBreakdown) {
    auto mag = std::make_shared<MaglevModel>();
    Dataset d(RowMatrix::Constant(20, 1, 0.6), RowMatrix::Zero(20, 1), 0.01);
    Problem pr = assemble(mag, d, Weighting::identity(1, 1));
    Vector th(2);
    th << 2e-4, 0.0;
    const SolveResult r = solve(pr, pr.initial_guess(th), SolverConfig{});
    EXPECT_EQ(r.status, SolveStatus::RankBreakdown);
    EXPECT_NE(r.message.find("column"), std::string::npos);
}

TEST(Stationarity, FailsAtGenericPoint) {
    Problem pr = lti_problem(30, 8, 0.1);
    Vector th(2);
    th << 0.1, 0.1;
    const StationarityReport rep = verify_stationarity(pr, pr.initial_guess(th), SolverConfig{});
    EXPECT_FALSE(rep.pass);
    EXPECT_GT(rep.h_inf, 1e-3);
}
