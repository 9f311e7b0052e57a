#include "momentum_lab/solvers.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace momentum_lab;

namespace {

LinearProblem random_consistent(Index n, Index d, std::uint64_t seed) {
    const Matrix a = test_support::gaussian(n, d, seed);
    const Vector w = test_support::gaussian(d, 1, seed + 1).col(0);
    return LinearProblem::consistent(a, a * w, w);
}

LinearProblem random_spd(Index n, std::uint64_t seed) {
    const Matrix k = test_support::spd(n, seed);
    const Vector w = test_support::gaussian(n, 1, seed + 1).col(0);
    return LinearProblem::positive_definite(k, k * w, w);
}

}  // namespace

TEST(RkDirection, SingleRowProjection) {
    Matrix a(1, 2);
    a << 1.0, 0.0;
    Vector y(1);
    y << 1.0;
    const Vector d = rk_direction(a, y, Vector::Zero(2), {0});
    EXPECT_DOUBLE_EQ(d(0), -1.0);
    EXPECT_DOUBLE_EQ(d(1), 0.0);
}

TEST(RkDirection, ZeroWhenBlockIsSolved) {
    const auto p = random_consistent(6, 4, 1);
    const Vector d = rk_direction(p.matrix, p.rhs, *p.solution, {1, 3});
    EXPECT_LT(d.norm(), 1e-12);
}

TEST(RkDirection, FullBlockLandsOnSolution) {
    const auto p = random_consistent(6, 4, 2);
    const Vector w = test_support::gaussian(4, 1, 3).col(0);
    const Vector d = rk_direction(p.matrix, p.rhs, w, {0, 1, 2, 3, 4, 5});
    // Least-squares oracle on the full system.
    const Vector ls = p.matrix.colPivHouseholderQr().solve(p.rhs);
    EXPECT_LT((w - d - ls).norm(), 1e-10);
    EXPECT_LT((w - d - *p.solution).norm(), 1e-10);
}

TEST(RkDirection, BlockProjectionIsExact) {
    const auto p = random_consistent(12, 8, 4);
    RandomStream rng(5);
    Vector w = Vector::Zero(8);
    const BlockSampler sampler(p, BlockScheme::uniform(3));
    for (int i = 0; i < 50; ++i) {
        const auto s = sampler.draw(rng);
        w -= rk_direction(p.matrix, p.rhs, w, s);
        const Vector ys = detail::gather(p.rhs, s);
        EXPECT_LE((detail::gather_rows(p.matrix, s) * w - ys).norm(), 1e-8 * ys.norm());
    }
}

TEST(CdDirection, HandValue) {
    Matrix k(3, 3);
    k << 2.0, 0.5, 0.0,
         0.5, 3.0, 0.1,
         0.0, 0.1, 1.0;
    Vector w = Vector::Zero(3);
    Vector y(3);
    y << -4.0, 1.0, 1.0;  // residual_0 = (K w - y)_0 = 4
    const Vector d = cd_direction(k, y, w, {0});
    EXPECT_DOUBLE_EQ(d(0), 2.0);
    EXPECT_EQ(d(1), 0.0);
    EXPECT_EQ(d(2), 0.0);
}

TEST(CdDirection, FullBlockIsDirectSolve) {
    const auto p = random_spd(7, 6);
    const Vector w = test_support::gaussian(7, 1, 7).col(0);
    const Vector d = cd_direction(p.matrix, p.rhs, w, {0, 1, 2, 3, 4, 5, 6});
    EXPECT_LT((w - d - pinv(p.matrix) * p.rhs).norm(), 1e-10);
}

TEST(CdDirection, SupportedOnBlockAndZeroAtSolution) {
    const auto p = random_spd(9, 8);
    const Vector w = test_support::gaussian(9, 1, 9).col(0);
    const std::vector<std::size_t> s{1, 4, 7};
    const Vector d = cd_direction(p.matrix, p.rhs, w, s);
    for (Index i = 0; i < 9; ++i) {
        if (i != 1 && i != 4 && i != 7) {
            EXPECT_EQ(d(i), 0.0);
        }
    }
    EXPECT_LT(cd_direction(p.matrix, p.rhs, *p.solution, s).norm(), 1e-12);
}

TEST(MinibatchDirection, SingleDrawMatchesDirection) {
    const auto p = random_spd(8, 10);
    const BlockSampler sampler(p, BlockScheme::uniform(3));
    const Vector w = Vector::Ones(8);
    RandomStream a(11), b(11);
    const Vector d = minibatch_direction(p, sampler, w, 1, a);
    const auto s = sampler.draw(b);
    EXPECT_LT((d - cd_direction(p.matrix, p.rhs, w, s)).norm(), 1e-14);
}

TEST(MinibatchDirection, DeterministicBlockAveragesToItself) {
    const auto p = random_consistent(5, 3, 12);
    const BlockSampler sampler(p, BlockScheme::uniform(5));
    const Vector w = Vector::Ones(3);
    RandomStream rng(13);
    const Vector d1 = minibatch_direction(p, sampler, w, 1, rng);
    const Vector d8 = minibatch_direction(p, sampler, w, 8, rng);
    EXPECT_LT((d1 - d8).norm(), 1e-12);
}

TEST(MinibatchDirection, MeanMatchesEnumeration) {
    const auto p = random_consistent(6, 4, 14);
    const BlockSampler sampler(p, BlockScheme::uniform(2));
    const Vector w = test_support::gaussian(4, 1, 15).col(0);
    Vector expected = Vector::Zero(4);
    double count = 0.0;
    detail::for_each_subset(6, 2, [&](const std::vector<std::size_t>& s) {
        expected += rk_direction(p.matrix, p.rhs, w, s);
        count += 1.0;
    });
    expected /= count;

    RandomStream rng(16);
    const int draws = 10000;
    Vector sum = Vector::Zero(4), sum_sq = Vector::Zero(4);
    for (int i = 0; i < draws; ++i) {
        const Vector d = minibatch_direction(p, sampler, w, 1, rng);
        sum += d;
        sum_sq += d.cwiseProduct(d);
    }
    const Vector mean = sum / draws;
    const Vector se = ((sum_sq / draws - mean.cwiseProduct(mean)) / draws).cwiseSqrt();
    for (Index i = 0; i < 4; ++i) EXPECT_LE(std::abs(mean(i) - expected(i)), 5.0 * se(i));
}

TEST(BlockSampler, WeightedProbabilitiesSumToOne) {
    const auto p = random_consistent(10, 4, 17);
    const BlockSampler rows(p, BlockScheme::row_weighted());
    double total = 0.0;
    for (double q : rows.probabilities()) total += q;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_THROW(BlockSampler(p, BlockScheme::coord_weighted()), std::invalid_argument);
    EXPECT_THROW(BlockSampler(p, BlockScheme::uniform(11)), std::invalid_argument);
}

TEST(MomentumSolve, FullBlockConvergesInOneStep) {
    const auto p = random_spd(12, 18);
    RandomStream rng(19);
    const auto res = momentum_solve(p, BlockScheme::uniform(12), MomentumConfig{}, 1e-8, 100, rng);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.iterations, 1);
    EXPECT_EQ(res.rows_sampled, 12);
}

TEST(MomentumSolve, ZeroBetaMatchesPlainDriver) {
    const auto p = random_spd(20, 20);
    const BlockScheme scheme = BlockScheme::uniform(4);
    RandomStream a(21), b(21);
    const auto res = momentum_solve(p, scheme, MomentumConfig{1.0, 0.0, 0.0, 3}, 1e-300, 60, a);

    // Plain mini-batch CD.
    const BlockSampler sampler(p, scheme);
    Vector w = Vector::Zero(20);
    for (int t = 0; t < 60; ++t) w -= minibatch_direction(p, sampler, w, 3, b);
    ASSERT_EQ(res.solution.size(), w.size());
    EXPECT_EQ(std::memcmp(res.solution.data(), w.data(), sizeof(double) * 20), 0);
}

TEST(MomentumSolve, RowsSampledAccounting) {
    const auto p = random_consistent(40, 10, 22);
    RandomStream rng(23);
    const auto res = momentum_solve(p, BlockScheme::uniform(5), MomentumConfig::nesterov(0.5, 4), 1e-6, 100000, rng);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.rows_sampled, res.iterations * 4 * 5);
    EXPECT_LE(res.final_residual, 1e-6);
    ASSERT_TRUE(res.final_error.has_value());
    EXPECT_LT(*res.final_error, 1e-3);
}

TEST(MomentumSolve, NonConvergenceIsFlagged) {
    const auto p = random_spd(30, 24);
    RandomStream rng(25);
    const auto res = momentum_solve(p, BlockScheme::uniform(1), MomentumConfig{}, 1e-14, 5, rng);
    EXPECT_FALSE(res.converged);
    EXPECT_EQ(res.iterations, 5);
    EXPECT_EQ(res.history.size(), 6u);
}

TEST(MomentumSolve, HistoryIsDecimated) {
    const auto p = random_spd(10, 26);
    RandomStream rng(27);
    const auto res = momentum_solve(p, BlockScheme::uniform(1), MomentumConfig{}, 1e-300, 5000, rng);
    ASSERT_EQ(res.iterations, 5000);
    // 0..1000 every step, then every 5th up to 5000.
    EXPECT_EQ(res.history.size(), 1001u + 800u);
    EXPECT_EQ(res.history.back().iteration, 5000);
}

TEST(MomentumSolve, EnergyNormDecreasesWithoutMomentum) {
    const auto p = random_spd(15, 28);
    const BlockSampler sampler(p, BlockScheme::uniform(2));
    MomentumChain chain(p, sampler, Vector::Zero(15));
    RandomStream rng(29);
    auto energy = [&](const Vector& w) {
        const Vector e = w - *p.solution;
        return e.dot(p.matrix * e);
    };
    double prev = energy(chain.iterate());
    for (int t = 0; t < 300; ++t) {
        chain.step(MomentumConfig{}, rng);
        const double cur = energy(chain.iterate());
        ASSERT_LE(cur, prev * (1.0 + 1e-12) + 1e-300);
        prev = cur;
    }
}

TEST(MomentumSolve, ScaleEquivariance) {
    const auto p = random_spd(16, 30);
    const auto scaled = LinearProblem::positive_definite(4.0 * p.matrix, 4.0 * p.rhs);
    RandomStream a(31), b(31);
    const auto r1 = momentum_solve(p, BlockScheme::uniform(4), MomentumConfig::nesterov(0.75, 4), 1e-6, 100000, a);
    const auto r2 = momentum_solve(scaled, BlockScheme::uniform(4), MomentumConfig::nesterov(0.75, 4), 1e-6, 100000, b);
    EXPECT_TRUE(r1.converged);
    EXPECT_EQ(r1.iterations, r2.iterations);
}

TEST(MomentumChain, ErrorSpaceViewMatchesProcess) {
    const auto p = random_spd(10, 32);
    const BlockScheme scheme = BlockScheme::uniform(3);
    const BlockSampler sampler(p, scheme);
    CoordinateRate rate(p, scheme);
    rate.set_average_rate(average_rate(p, scheme).average_rate);
    const MomentumConfig cfg = MomentumConfig::nesterov(0.6, 2);

    MomentumChain chain(p, sampler, Vector::Zero(10));
    auto state = ProcessState::start(rate.root() * (Vector::Zero(10) - *p.solution));
    state.previous = state.current;  // the chain starts its look-ahead at w_0, not at w*
    RandomStream a(33), b(33);
    for (int t = 0; t < 40; ++t) {
        chain.step(cfg, a);
        state = momentum_step(state, rate, cfg, b);
        const Vector delta = rate.root() * (chain.iterate() - *p.solution);
        ASSERT_LT((delta - state.current).norm(), 1e-9 * (1.0 + state.current.norm())) << "t = " << t;
    }
}

TEST(ConditionNumber, ClosedForms) {
    const auto id = LinearProblem::positive_definite(Matrix::Identity(5, 5), Vector::Ones(5));
    EXPECT_NEAR(condition_number(id, BlockScheme::coord_weighted()).kappa, 5.0, 1e-12);
    EXPECT_NEAR(kappa_cd(Matrix::Identity(5, 5)), 5.0, 1e-12);

    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 2.0;
    const auto rk = LinearProblem::consistent(a, Vector::Ones(2));
    EXPECT_NEAR(condition_number(rk, BlockScheme::row_weighted()).kappa, 5.0, 1e-12);
    EXPECT_NEAR(kappa_rk(a), 5.0, 1e-12);

    Matrix k = Matrix::Zero(2, 2);
    k(0, 0) = 2.0;
    k(1, 1) = 1.0;
    const auto cd = LinearProblem::positive_definite(k, Vector::Ones(2));
    const auto est = condition_number(cd, BlockScheme::coord_weighted());
    EXPECT_NEAR(est.average_rate(0, 0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(est.kappa, 3.0, 1e-12);
    EXPECT_FALSE(est.estimated);
}

TEST(ConditionNumber, UniformBlocksEnumeratedOrEstimated) {
    const auto id = LinearProblem::positive_definite(Matrix::Identity(8, 8), Vector::Ones(8));
    const auto small = condition_number(id, BlockScheme::uniform(2));
    EXPECT_FALSE(small.estimated);
    EXPECT_NEAR(small.kappa, 4.0, 1e-10);

    const auto big = LinearProblem::positive_definite(Matrix::Identity(24, 24), Vector::Ones(24));
    const auto est = condition_number(big, BlockScheme::uniform(6), 3);
    EXPECT_TRUE(est.estimated);
    EXPECT_NEAR(est.kappa, 4.0, 0.2);
}

TEST(ConditionNumber, UniformRowBlocksMatchEnumeratedProjections) {
    const auto p = random_consistent(6, 3, 34);
    const auto est = average_rate(p, BlockScheme::uniform(2));
    Matrix expected = Matrix::Zero(3, 3);
    double count = 0.0;
    detail::for_each_subset(6, 2, [&](const std::vector<std::size_t>& s) {
        const Matrix as = detail::gather_rows(p.matrix, s);
        expected += pinv(as) * as;
        count += 1.0;
    });
    EXPECT_LT((est.average_rate - expected / count).norm(), 1e-12);
}

TEST(BetaSchedule, Branches) {
    EXPECT_EQ(beta_schedule(1.0, 1e6, 2.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(beta_schedule(2.0, 1e6, 2.0, 1.0), 0.5);  // m = c1 takes the middle branch
    EXPECT_DOUBLE_EQ(beta_schedule(4.0, 1e6, 2.0, 1.0), 0.75);
    const double sat = 1.0 - 2.0 / (2.0 * 1.0 * 1000.0);
    EXPECT_DOUBLE_EQ(beta_schedule(1e5, 1e6, 2.0, 1.0), sat);
    EXPECT_DOUBLE_EQ(beta_schedule(1e9, 1e6, 2.0, 1.0), sat);
    EXPECT_DOUBLE_EQ(beta_schedule(1000.0, 1e6, 2.0, 1.0), 1.0 - 2.0 / 2000.0);  // m = c2 sqrt(kappa)
    EXPECT_THROW(beta_schedule(0.5, 10.0, 1.0, 1.0), std::invalid_argument);
}

TEST(PracticalBeta, Values) {
    EXPECT_EQ(practical_beta(1.0), 0.0);
    EXPECT_DOUBLE_EQ(practical_beta(8.0), 0.875);
    EXPECT_DOUBLE_EQ(practical_beta(1e6, 900.0), 1.0 - 1.0 / 90.0);
    EXPECT_DOUBLE_EQ(practical_beta(4.0, 900.0), 0.75);
}

TEST(BaseRate, SingleCoordinateDescentBelowEnvelope) {
    const Matrix k = test_support::spd(16, 35);
    const auto p = LinearProblem::positive_definite(k, Vector::Ones(16));
    CoordinateRate rate(p, BlockScheme::coord_weighted());
    rate.set_average_rate(k / k.trace());
    const double kappa = kappa_cd(k);
    const Vector d0 = test_support::gaussian(16, 1, 36).col(0);
    const auto mc = monte_carlo_moments(rate, MomentumConfig{}, d0, 100, 500, 37);
    for (std::size_t t = 0; t < mc.mean.size(); ++t) {
        const double env = std::pow(1.0 - 1.0 / kappa, static_cast<double>(t)) * d0.squaredNorm();
        EXPECT_LE(mc.mean[t], env * (1.0 + 1e-12) + 3.0 * mc.std_error[t]) << "t = " << t;
    }
}
