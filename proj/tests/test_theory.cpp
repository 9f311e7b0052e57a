#include "momentum_lab/theory.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <complex>

using namespace momentum_lab;

namespace {

/// Independent eigenvalue oracle: roots of g^2 - tr g + det via std::complex.
std::pair<cplx, cplx> quadratic_roots(double lambda, double beta, double omega) {
    const double tr = (1.0 + beta) - (1.0 + beta * omega) * lambda;
    const double det = beta * (1.0 - omega * lambda);
    const cplx s = std::sqrt(cplx(tr * tr - 4.0 * det, 0.0));
    cplx a = 0.5 * (tr + s), b = 0.5 * (tr - s);
    if (std::abs(b) > std::abs(a)) std::swap(a, b);
    return {a, b};
}

struct GridPoint {
    double lambda, phi, omega;
};

std::vector<GridPoint> admissible_grid(std::size_t count, std::uint64_t seed) {
    RandomStream rng(seed);
    const double omegas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<GridPoint> out;
    for (std::size_t i = 0; i < count; ++i) {
        const double phi = 2.0 + 48.0 * rng.uniform();
        const double cap = std::min(1.0, 1.0 / (9.0 * phi * phi));
        const double lambda = cap * (1.0 - rng.uniform());
        out.push_back({lambda, phi, omegas[rng.below(5)]});
    }
    return out;
}

}  // namespace

TEST(BuildBlock, ZeroLambda) {
    const auto b = build_block(0.0, 0.5, 0.0);
    EXPECT_NEAR(b.eig1.real(), 1.0, 1e-15);
    EXPECT_NEAR(b.eig2.real(), 0.5, 1e-15);
    EXPECT_EQ(b.kind, EigenKind::real_distinct);
}

TEST(BuildBlock, NoMomentum) {
    const auto b = build_block(0.3, 0.0, 0.7);
    EXPECT_NEAR(b.eig1.real(), 0.7, 1e-15);
    EXPECT_EQ(b.eig2, cplx(0.0));
}

TEST(BuildBlock, ComplexPair) {
    const auto b = build_block(0.5, 0.5, 1.0);
    EXPECT_EQ(b.kind, EigenKind::complex_pair);
    EXPECT_NEAR(b.discriminant, -0.4375, 1e-15);
    EXPECT_NEAR(std::norm(b.eig1), 0.25, 1e-15);
    EXPECT_NEAR(std::norm(b.eig2), 0.25, 1e-15);
}

TEST(BuildBlock, RealEqualBoundary) {
    // omega = 0: the discriminant vanishes at lambda = (1 - sqrt(beta))^2.
    const auto b = build_block(0.0625, 0.5625, 0.0);
    EXPECT_EQ(b.kind, EigenKind::real_equal);
    EXPECT_DOUBLE_EQ(b.eig1.real(), 0.75);
    EXPECT_EQ(b.eig1, b.eig2);
}

TEST(BuildBlock, TraceDeterminantAndOracleOnRandomGrid) {
    RandomStream rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double lambda = rng.uniform(), beta = 1.5 * rng.uniform(), omega = rng.uniform();
        const auto b = build_block(lambda, beta, omega);
        EXPECT_LE(std::abs(b.eig1 + b.eig2 - b.matrix.trace()), 1e-12);
        EXPECT_LE(std::abs(b.eig1 * b.eig2 - b.matrix.det()), 1e-12);
        EXPECT_GE(std::abs(b.eig1), std::abs(b.eig2));
        const auto [g1, g2] = quadratic_roots(lambda, beta, omega);
        if (b.kind != EigenKind::real_equal) {
            EXPECT_NEAR(std::abs(b.eig1), std::abs(g1), 1e-9);
        }
        const bool complex = b.discriminant < -kDiscriminantTolerance;
        EXPECT_EQ(complex, b.kind == EigenKind::complex_pair);
    }
}

TEST(BuildBlock, RejectsOutOfRange) {
    EXPECT_THROW(build_block(1.5, 0.5, 0.0), std::invalid_argument);
    EXPECT_THROW(build_block(0.5, -0.1, 0.0), std::invalid_argument);
    EXPECT_THROW(build_block(0.5, 0.5, 1.1), std::invalid_argument);
}

TEST(RadiusBound, ComplexAttained) {
    const auto b = build_block(0.5, 0.5, 1.0);
    EXPECT_NEAR(radius_bound(b, 2.0), 0.25, 1e-15);
    EXPECT_NEAR(std::norm(b.eig1), radius_bound(b, 2.0), 1e-12);
}

TEST(RadiusBound, RealEqualAttained) {
    const double beta = 0.5625;
    const auto b = build_block(0.0625, beta, 0.0);
    const double phi = 1.0 / (1.0 - beta);
    EXPECT_NEAR(std::norm(b.eig1), radius_bound(b, phi), 1e-12);
}

TEST(RadiusBound, RealDistinctStrict) {
    const auto b = build_block(0.01, 0.5, 0.0);
    // Oracle from the quadratic formula: (1.49 + sqrt(0.2201)) / 2.
    EXPECT_NEAR(b.eig1.real(), 0.979574082, 1e-9);
    EXPECT_NEAR(std::sqrt(radius_bound(b, 2.0)), 0.99, 1e-15);
    EXPECT_LT(std::norm(b.eig1), radius_bound(b, 2.0));
}

TEST(RadiusBound, RejectsSmallPhi) {
    EXPECT_THROW(radius_bound(build_block(0.1, 0.25, 0.0), 4.0 / 3.0), std::invalid_argument);
    EXPECT_THROW(radius_bound(build_block(0.1, 0.5, 0.0), 3.0), std::invalid_argument);
}

TEST(RadiusBound, SharpnessOverPhiGrid) {
    RandomStream rng(2);
    const double omegas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 10000; ++i) {
        const double phi = 2.0 + 48.0 * rng.uniform();
        const double lambda = 1.0 - rng.uniform();
        const auto b = build_block(lambda, 1.0 - 1.0 / phi, omegas[rng.below(5)]);
        const double bound = radius_bound(b, phi);
        if (b.kind == EigenKind::real_distinct) {
            EXPECT_LT(std::norm(b.eig1), bound);
            EXPECT_LT(b.radius(), (1.0 - phi * lambda / 2.0) * (1.0 - b.omega * lambda));
        } else {
            EXPECT_NEAR(std::norm(b.eig1), bound, 1e-12);
        }
    }
}

TEST(SchurForm, DegenerateBlock) {
    const auto b = build_block(0.0, 0.0, 0.0);
    const auto s = schur_form(b);
    EXPECT_NEAR(s.upper(0, 0).real(), 1.0, 1e-15);
    EXPECT_NEAR(std::abs(s.upper(1, 1)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(s.corner), 1.0, 1e-15);
    EXPECT_LE(s.triangular_residual, 1e-12);
}

TEST(SchurForm, FrobeniusArithmetic) {
    const auto s = schur_form(build_block(0.01, 0.5, 0.0));
    EXPECT_NEAR(std::norm(s.corner), 2.25, 1e-10);
    EXPECT_NEAR(std::abs(s.corner), 1.5, 1e-10);
}

TEST(SchurForm, InvariantsEverywhere) {
    RandomStream rng(3);
    for (int i = 0; i < 10000; ++i) {
        const auto b = build_block(rng.uniform(), 1.2 * rng.uniform(), rng.uniform());
        const auto s = schur_form(b);
        EXPECT_LE(s.unitarity_residual, 1e-12);
        EXPECT_LE(s.triangular_residual, 1e-10);
        EXPECT_LE(std::abs(s.frobenius_gap), 1e-10);
    }
}

TEST(SchurForm, CornerBoundedInAdmissibleRegime) {
    for (const auto& g : admissible_grid(5000, 4)) {
        const auto s = schur_form(build_block(g.lambda, 1.0 - 1.0 / g.phi, g.omega));
        EXPECT_GE(std::abs(s.corner), 1.0 - 1e-12);
        EXPECT_LE(std::abs(s.corner), 3.0 + 1e-12);
    }
}

TEST(SchurForm, CornerCanDropBelowOneOutsideRegime) {
    const auto s = schur_form(build_block(1.0, 0.5, 0.0));
    EXPECT_LT(std::abs(s.corner), 1.0);
}

TEST(BlockPowerNorm, Examples) {
    const auto b = build_block(0.5, 0.0, 0.0);
    EXPECT_EQ(block_power_norm(b, 0), 1.0);
    EXPECT_NEAR(block_power_norm(b, 3), std::sqrt(0.125 * 0.125 + 0.25 * 0.25), 1e-15);
}

TEST(BlockPowerNorm, MatchesDenseSvd) {
    RandomStream rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto b = build_block(rng.uniform(), rng.uniform(), rng.uniform());
        Matrix t(2, 2);
        t << b.matrix.a, b.matrix.b, b.matrix.c, b.matrix.d;
        Matrix p = Matrix::Identity(2, 2);
        const auto norms = block_power_norms(b, 30);
        for (int k = 1; k <= 30; ++k) {
            p = p * t;
            EXPECT_NEAR(norms[static_cast<std::size_t>(k)], spectral_norm(p), 1e-10 * (1.0 + spectral_norm(p)));
        }
    }
}

TEST(BlockPowerNorm, CorollaryBoundOnAdmissibleGrid) {
    for (const auto& g : admissible_grid(300, 6)) {
        const auto b = build_block(g.lambda, 1.0 - 1.0 / g.phi, g.omega);
        const auto norms = block_power_norms(b, 500);
        for (int k = 0; k <= 500; ++k) ASSERT_LE(norms[static_cast<std::size_t>(k)], power_norm_bound(b, k) + 1e-9) << k;
    }
}

TEST(TctNormBound, Examples) {
    const auto distinct = build_block(0.01, 0.5, 0.0);
    EXPECT_EQ(tct_norms(distinct, 0)[0], 1.0);
    EXPECT_EQ(tct_norm_bound(distinct, 0), 11.0);
    const double gap = std::abs(distinct.eig1 - distinct.eig2);
    EXPECT_DOUBLE_EQ(h_factor(distinct, 10), 2.0 / gap);
    EXPECT_LE(tct_norms(distinct, 10)[10], tct_norm_bound(distinct, 10));

    // Complex pair close to the real-equal boundary, where k/|g1| is the smaller branch.
    const auto complex = build_block(0.07, 0.5625, 0.0);
    ASSERT_EQ(complex.kind, EigenKind::complex_pair);
    EXPECT_DOUBLE_EQ(h_factor(complex, 5), 5.0 / complex.radius());
    EXPECT_LE(tct_norms(complex, 5)[5], tct_norm_bound(complex, 5));
    // Far from it the gap branch wins.
    const auto wide = build_block(0.5, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(h_factor(wide, 5), 2.0 / std::abs(wide.eig1 - wide.eig2));
    EXPECT_LE(tct_norms(wide, 5)[5], tct_norm_bound(wide, 5));

    const auto equal = build_block(0.0625, 0.5625, 0.0);
    EXPECT_DOUBLE_EQ(h_factor(equal, 7), 7.0 / 0.75);
}

TEST(TctNormBound, NilpotentBlockReportsExactNorm) {
    // lambda = 1, beta = 0: T = [[0, 0], [1, 0]].
    const auto b = build_block(1.0, 0.0, 0.0);
    EXPECT_EQ(b.radius(), 0.0);
    EXPECT_EQ(tct_norm_bound(b, 1), 1.0);
    EXPECT_EQ(tct_norm_bound(b, 2), 0.0);
}

TEST(TctNormBound, LemmaOnAdmissibleGrid) {
    for (const auto& g : admissible_grid(500, 7)) {
        const auto b = build_block(g.lambda, 1.0 - 1.0 / g.phi, g.omega);
        const auto exact = tct_norms(b, 200);
        for (int k = 0; k <= 200; ++k) ASSERT_LE(exact[static_cast<std::size_t>(k)], tct_norm_bound(b, k)) << k;
    }
}

TEST(Ell, MatchesDirectMaximum) {
    const auto b = build_block(0.005, 0.5, 1.0);
    double best = 0.0;
    for (int k = 0; k <= 300; ++k) {
        const double h = k == 0 ? 1.0 : h_factor(b, k);
        best = std::max(best, 11.0 * std::pow(b.radius(), k) * h * h);
    }
    EXPECT_NEAR(ell(b, 300), best, 1e-12 * best);
    EXPECT_EQ(ell(b, 0), 11.0);
}

TEST(PtRecursion, BaseAndOneStep) {
    TheoryBoundInputs in;
    in.spectrum = {0.5};
    in.minibatch = 1.0;
    in.phi = 1.0;  // beta = 0
    in.omega = 0.0;
    in.horizon = 3;
    const auto p = pt_recursion(in);
    EXPECT_EQ(p[0], 1.0);
    // T = [[0.5, 0], [1, 0]], |T^T T| = 1.25, q = 4 * 0.25 / 1.
    EXPECT_NEAR(p[1], 1.25 + 1.0, 1e-14);
}

TEST(PtRecursion, NoiseFreeLimit) {
    TheoryBoundInputs in;
    in.spectrum = {0.02};
    in.minibatch = 1e12;
    in.phi = 2.0;
    in.horizon = 50;
    const auto p = pt_recursion(in);
    const auto exact = tct_norms(build_block(0.02, 0.5, 1.0), 50);
    for (int t = 0; t <= 50; ++t) EXPECT_NEAR(p[static_cast<std::size_t>(t)], exact[static_cast<std::size_t>(t)], 1e-9);
}

TEST(RhoEnvelope, PlugIn) {
    TheoryBoundInputs in;
    in.spectrum = {0.01};
    in.phi = 2.0;
    in.minibatch = 2.0 * kDefaultAnalysisConstant;
    in.horizon = 10;
    const auto r = rho_envelope(in);
    EXPECT_DOUBLE_EQ(r.rho, 0.995);
    EXPECT_TRUE(r.passed());
    EXPECT_TRUE(r.certified);
}

TEST(RhoEnvelope, BoundaryAcceptedViolationRejected) {
    TheoryBoundInputs in;
    in.spectrum = {0.01};
    in.phi = 3.0;
    in.minibatch = 3.0 * kDefaultAnalysisConstant;
    in.horizon = 10;
    EXPECT_NO_THROW(rho_envelope(in));
    in.minibatch = 2.9 * kDefaultAnalysisConstant;
    try {
        rho_envelope(in);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("m/C"), std::string::npos);
    }
    in.minibatch = 1e9;
    in.phi = 3.5;
    try {
        rho_envelope(in);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("sqrt(lambda_r)"), std::string::npos);
    }
}

TEST(RhoEnvelope, PerEigenvalueDirectEvaluation) {
    TheoryBoundInputs in;
    in.spectrum = {0.02, 0.005};
    in.phi = 2.0;
    in.minibatch = 2.0 * kDefaultAnalysisConstant;
    in.horizon = 100;
    const auto r = rho_envelope(in);
    for (double lam : in.spectrum) {
        const auto [g1, g2] = quadratic_roots(lam, 0.5, 1.0);
        double l = 0.0;
        for (int k = 0; k <= 100; ++k) {
            const double h = k == 0 ? 1.0 : std::min(k / std::abs(g1), 2.0 / std::abs(g1 - g2));
            l = std::max(l, 11.0 * std::pow(std::abs(g1), k) * h * h);
        }
        const double lhs = std::abs(g1) + 4.0 * lam * (1.0 - lam) / in.minibatch * l;
        EXPECT_LE(lhs, r.rho);
        EXPECT_LE(lhs, r.lhs + 1e-12);
    }
}

TEST(RhoEnvelope, RelaxedConstantIsNotCertified) {
    TheoryBoundInputs in;
    in.spectrum = {0.01};
    in.phi = 2.0;
    in.minibatch = 64.0;
    in.analysis_constant = 16.0;
    in.horizon = 50;
    EXPECT_FALSE(rho_envelope(in).certified);
}

TEST(BiasEnvelope, PlugInAndOmegaOrdering) {
    TheoryBoundInputs in;
    in.spectrum = {0.01};
    in.phi = 2.0;
    in.omega = 1.0;
    EXPECT_DOUBLE_EQ(bias_envelope(in, 1), 425.0);
    auto hb = in;
    hb.omega = 0.0;
    for (int t : {2, 10, 100}) EXPECT_LT(bias_envelope(in, t), bias_envelope(hb, t));
}

TEST(BiasEnvelope, DeterministicSimulationStaysBelow) {
    for (double omega : {0.0, 0.5, 1.0}) {
        TheoryBoundInputs in;
        in.spectrum = {0.5, 0.1, 0.01};
        in.phi = 3.0;
        in.omega = omega;
        const Matrix t = expected_transition(in.spectrum, in.beta(), omega);
        Vector z = Vector::Zero(6);
        z.head(3) = Vector::Ones(3) / std::sqrt(3.0);
        for (int step = 0; step <= 500; ++step) {
            z = t * z;  // z = [Delta_{step+1}; Delta_step]
            ASSERT_LE(z.head(3).squaredNorm(), bias_envelope(in, step)) << "t = " << step;
        }
    }
}

TEST(L2Envelope, PlugIn) {
    EXPECT_DOUBLE_EQ(l2_envelope_value(2.0, 0.1, 1), 170.0);
    EXPECT_NEAR(l2_envelope_value(2.0, 0.1, 100), 170.0 * 1e6 * std::pow(0.95, 99), 1e-6);
    TheoryBoundInputs in;
    in.spectrum = {0.01};
    in.phi = 2.0;
    in.minibatch = 2.0 * kDefaultAnalysisConstant;
    EXPECT_DOUBLE_EQ(l2_envelope(in, 1), 170.0);
    in.minibatch = 100.0;
    EXPECT_THROW(l2_envelope(in, 1), std::invalid_argument);
}

TEST(SecondMomentBound, Edges) {
    const auto hb = second_moment_block_bound({0.3, 0.7}, 4.0, 0.0);
    EXPECT_EQ(hb[0].d, 0.0);
    EXPECT_EQ(hb[1].d, 0.0);
    EXPECT_NEAR(hb[0].a, 0.21, 1e-15);
    const auto edges = second_moment_block_bound({0.0, 1.0}, 1.0, 1.0);
    for (const auto& w : edges) {
        EXPECT_EQ(w.a, 0.0);
        EXPECT_EQ(w.d, 0.0);
    }
}

TEST(SecondMomentBound, MonteCarloWithinEnvelope) {
    // Two-dimensional explicit sampler: rank-one projections onto three directions.
    std::vector<Matrix> outcomes;
    for (double th : {0.1, 1.2, 2.3}) {
        Vector v(2);
        v << std::cos(th), std::sin(th);
        outcomes.push_back(v * v.transpose());
    }
    const DiscreteRate sampler(outcomes, {0.5, 0.3, 0.2});
    for (int m : {1, 4}) {
        for (double omega : {0.0, 1.0}) {
            const auto est = transition_noise(sampler, m, 0.6, omega, 100000, 8);
            const Matrix env = second_moment_envelope_matrix(est.spectrum, m, omega);
            const Matrix diff = est.estimate - env;
            const double excess = sym_eig(0.5 * (diff + diff.transpose())).eigenvalues(0);
            EXPECT_LE(excess, 5.0 * spectral_norm(est.std_error)) << "m = " << m << " omega = " << omega;
        }
    }
}

TEST(BlockDiagonalization, SmallCases) {
    EXPECT_TRUE(verify_block_diagonalization({0.3}, 0.5, 1.0).passed);
    const auto rep = verify_block_diagonalization({0.5, 0.2, 0.01}, 0.5, 1.0);
    EXPECT_TRUE(rep.passed) << rep.max_mismatch;
    EXPECT_EQ(rep.full_eigenvalues.size(), 6u);
    const auto plain = verify_block_diagonalization({0.5, 0.2, 0.01}, 0.0, 0.0);
    EXPECT_TRUE(plain.passed);
    EXPECT_THROW(verify_block_diagonalization(std::vector<double>(65, 0.1), 0.5, 0.0), std::invalid_argument);
}

TEST(BlockDiagonalization, RandomSpectra) {
    RandomStream rng(9);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> lam(16);
        for (double& l : lam) l = rng.uniform();
        EXPECT_TRUE(verify_block_diagonalization(lam, rng.uniform(), rng.uniform()).passed);
    }
}

TEST(HelperInequalities, Grid) {
    std::vector<double> betas, xs;
    for (int i = 0; i < 200; ++i) betas.push_back(0.5 + 0.4975 * i / 199.0);
    for (int i = 0; i < 200; ++i) xs.push_back(1.0 + 99.0 * std::pow(i / 199.0, 2));
    const auto recs = verify_helper_inequalities(betas, xs);
    EXPECT_EQ(recs.size(), 6u * betas.size());
    for (const auto& r : recs) {
        if (r.check == "helper.g_infimum") {
            EXPECT_FALSE(r.passed()) << r.params;
        } else {
            EXPECT_TRUE(r.passed()) << r.check << " " << r.params << " margin " << r.margin();
        }
    }
}

TEST(HelperInequalities, FourFifthsBoundFailsAtOne) {
    // x = 1 is in the set for every beta; g(1)/c1 = 1 - 1/(1+beta)^2 < 0.75 < 0.8.
    for (double beta : {0.5, 0.7, 0.9, 0.999}) {
        const double c1 = detail::frontier(beta, 1.0);
        EXPECT_LT(detail::helper_g(beta, 1.0), 0.8 * c1);
        EXPECT_GT(detail::helper_g(beta, 1.0), 0.5 * c1);
    }
}

TEST(HelperInequalities, FrontierAtOne) {
    const double beta = 0.6;
    const double c = (1 - beta) * (1 - beta) / ((1 + beta) * (1 + beta));
    EXPECT_DOUBLE_EQ(detail::frontier(beta, 1.0), c);
    EXPECT_THROW(verify_helper_inequalities({0.4}, {1.0}), std::invalid_argument);
    EXPECT_THROW(verify_helper_inequalities({0.6}, {0.5}), std::invalid_argument);
}

TEST(ProductSecondMoment, BelowRecursionOnSmallSampler) {
    // Rank-2 Kaczmarz sampler in R^4.
    const Matrix a = test_support::gaussian(6, 2, 10) * test_support::gaussian(2, 4, 11);
    const auto sampler = DiscreteRate::kaczmarz_rows(a);
    const auto eig = sym_eig(sampler.average_rate(), true);
    ASSERT_EQ(eig.rank, 2);
    TheoryBoundInputs in;
    for (Index i = 0; i < eig.rank; ++i) in.spectrum.push_back(eig.eigenvalues(i));
    in.minibatch = 4.0;
    in.phi = 2.0;
    in.omega = 1.0;
    in.horizon = 20;
    const auto p = pt_recursion(in);
    const auto mc = product_second_moment(sampler, 4, in.beta(), 1.0, 20, 2000, 12);
    EXPECT_NEAR(mc.norm[0], 1.0, 1e-12);
    for (std::size_t t = 0; t <= 20; ++t) EXPECT_LE(mc.norm[t], p[t] + 5.0 * mc.std_error[t]) << "t = " << t;
}

TEST(ProductSecondMoment, IndependentOfThreadCount) {
    const Matrix a = test_support::gaussian(5, 3, 13);
    const auto sampler = DiscreteRate::kaczmarz_rows(a);
    const auto one = product_second_moment(sampler, 2, 0.5, 1.0, 10, 600, 14, 1);
    const auto three = product_second_moment(sampler, 2, 0.5, 1.0, 10, 600, 14, 3);
    EXPECT_EQ(one.norm, three.norm);
    EXPECT_EQ(one.std_error, three.std_error);
}

TEST(CheckRecord, TabularLine) {
    std::ostringstream os;
    write_check_header(os);
    write_check(os, {"demo", "k=1", 1.0, 2.0, false});
    EXPECT_EQ(os.str(), "check\tparams\tlhs\trhs\tmargin\tstatus\ndemo\tk=1\t1\t2\t1\tpass\n");
}
