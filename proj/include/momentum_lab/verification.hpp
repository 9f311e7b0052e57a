#pragma once

// Seeded grids and check suites over the transition-block bounds. Each suite
// returns one CheckRecord per checked inequality.

#include "momentum_lab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace momentum_lab {

struct BlockParams {
    double lambda = 0.0;
    double phi = 2.0;
    double omega = 0.0;
    double beta() const { return 1.0 - 1.0 / phi; }
};

inline constexpr double kOmegaGrid[] = {0.0, 0.25, 0.5, 0.75, 1.0};

/// phi uniform on [2, 50], lambda uniform on (0, min(1, 1/(9 phi^2))], omega from the five-point grid.
inline std::vector<BlockParams> admissible_triples(std::size_t count, std::uint64_t seed) {
    RandomStream rng(seed, 0, 0x74726970);
    std::vector<BlockParams> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double phi = 2.0 + 48.0 * rng.uniform();
        const double cap = std::min(1.0, 1.0 / (9.0 * phi * phi));
        const double lambda = cap * (1.0 - rng.uniform());
        out.push_back({lambda, phi, kOmegaGrid[rng.below(5)]});
    }
    return out;
}

namespace detail {

inline std::string block_param(const BlockParams& p) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "lambda=%.9g,phi=%.9g,omega=%g", p.lambda, p.phi, p.omega);
    return buf;
}

}  // namespace detail

inline std::vector<CheckRecord> suite_eigenvalue_law(const std::vector<BlockParams>& grid) {
    std::vector<CheckRecord> out;
    for (const auto& p : grid) {
        const auto b = build_block(p.lambda, p.beta(), p.omega);
        const std::string tag = detail::block_param(p) + ",kind=" + to_string(b.kind);
        if (b.kind == EigenKind::real_distinct) {
            out.push_back({"eig.real_distinct_radius", tag, b.radius(), (1.0 - p.phi * p.lambda / 2.0) * (1.0 - p.omega * p.lambda), true});
        } else {
            const double target = (1.0 - 1.0 / p.phi) * (1.0 - p.omega * p.lambda);
            out.push_back({"eig.modulus_identity", tag, std::abs(std::norm(b.eig1) - target), 1e-12, false});
        }
    }
    return out;
}

inline std::vector<CheckRecord> suite_schur(const std::vector<BlockParams>& grid) {
    std::vector<CheckRecord> out;
    for (const auto& p : grid) {
        const auto s = schur_form(build_block(p.lambda, p.beta(), p.omega));
        const std::string tag = detail::block_param(p);
        out.push_back({"schur.unitarity", tag, s.unitarity_residual, 1e-12, false});
        out.push_back({"schur.triangular", tag, s.triangular_residual, 1e-10, false});
        out.push_back({"schur.frobenius", tag, std::abs(s.frobenius_gap), 1e-10, false});
        if (admissible(p.lambda, p.phi)) {
            out.push_back({"schur.corner_lower", tag, 1.0, std::abs(s.corner), false});
            out.push_back({"schur.corner_upper", tag, std::abs(s.corner), 3.0, false});
        }
    }
    return out;
}

/// Worst ratio exact/bound over k per block, for |T^k| (k <= power_kmax) and
/// |(T^T)^k T^k| (k <= tct_kmax).
inline std::vector<CheckRecord> suite_norm_bounds(const std::vector<BlockParams>& grid, int power_kmax = 500, int tct_kmax = 200) {
    std::vector<CheckRecord> out;
    for (const auto& p : grid) {
        const auto b = build_block(p.lambda, p.beta(), p.omega);
        const auto norms = block_power_norms(b, std::max(power_kmax, tct_kmax));
        const std::string tag = detail::block_param(p);
        double worst = 0.0;
        for (int k = 0; k <= power_kmax; ++k) worst = std::max(worst, norms[static_cast<std::size_t>(k)] / power_norm_bound(b, k));
        out.push_back({"norm.power_ratio", tag, worst, 1.0, false});
        worst = 0.0;
        for (int k = 0; k <= tct_kmax; ++k) {
            const double exact = norms[static_cast<std::size_t>(k)] * norms[static_cast<std::size_t>(k)];
            worst = std::max(worst, exact / tct_norm_bound(b, k));
        }
        out.push_back({"norm.tct_ratio", tag, worst, 1.0, false});
    }
    return out;
}

/// Inputs satisfying 2 <= phi <= min(m/C, 1/(3 sqrt(lambda_r))): rank 1..8,
/// lambda_r small enough for phi >= 2, m just large enough for phi.
inline std::vector<TheoryBoundInputs> admissible_bound_inputs(std::size_t count, int horizon, std::uint64_t seed) {
    RandomStream rng(seed, 0, 0x72686f);
    std::vector<TheoryBoundInputs> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        TheoryBoundInputs in;
        const std::size_t rank = 1 + rng.below(8);
        // log-uniform lambda_r in [1e-6, 1/36]
        const double lr = std::exp(std::log(1e-6) + (std::log(1.0 / 36.0) - std::log(1e-6)) * rng.uniform());
        const double cap = 1.0 / (3.0 * std::sqrt(lr));
        in.phi = 2.0 + (cap - 2.0) * rng.uniform();
        in.minibatch = std::ceil(in.phi * in.analysis_constant * (1.0 + rng.uniform()));
        in.omega = kOmegaGrid[rng.below(5)];
        in.horizon = horizon;
        in.spectrum.push_back(lr);
        for (std::size_t j = 1; j < rank; ++j) in.spectrum.push_back(lr + (1.0 - lr) * rng.uniform());
        std::sort(in.spectrum.begin(), in.spectrum.end(), std::greater<>());
        out.push_back(std::move(in));
    }
    return out;
}

inline std::vector<CheckRecord> suite_rho(const std::vector<TheoryBoundInputs>& inputs) {
    std::vector<CheckRecord> out;
    for (const auto& in : inputs) {
        const auto r = rho_envelope(in);
        char buf[160];
        std::snprintf(buf, sizeof buf, "rank=%zu,lambda_r=%.9g,phi=%.9g,m=%.9g,omega=%g,t=%d", in.rank(), in.lambda_r(), in.phi,
                      in.minibatch, in.omega, in.horizon);
        out.push_back({"rho.envelope", buf, r.lhs, r.rho, false});
    }
    return out;
}

inline std::vector<CheckRecord> suite_block_diagonalization(std::size_t count, std::uint64_t seed) {
    RandomStream rng(seed, 0, 0x626c6b);
    std::vector<CheckRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t d = 1 + rng.below(16);
        std::vector<double> lam(d);
        for (double& l : lam) l = rng.uniform();
        const double beta = rng.uniform();
        const double omega = kOmegaGrid[rng.below(5)];
        const auto rep = verify_block_diagonalization(lam, beta, omega);
        char buf[96];
        std::snprintf(buf, sizeof buf, "d=%zu,beta=%.9g,omega=%g", d, beta, omega);
        out.push_back({"blockdiag.eigenvalue_match", buf, rep.max_mismatch, 1e-8, false});
    }
    return out;
}

inline std::vector<CheckRecord> suite_helper(std::size_t beta_count = 200, std::size_t x_count = 2000) {
    std::vector<double> betas, xs;
    for (std::size_t i = 0; i < beta_count; ++i) betas.push_back(0.5 + 0.499 * static_cast<double>(i) / static_cast<double>(beta_count));
    for (std::size_t i = 0; i < x_count; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(x_count - 1);
        xs.push_back(1.0 + 999.0 * u * u * u);
    }
    return verify_helper_inequalities(betas, xs);
}

/// Per check name: count, failures, smallest margin.
struct CheckSummary {
    std::string check;
    std::size_t count = 0;
    std::size_t failures = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::string worst_params;
};

inline std::vector<CheckSummary> summarize(const std::vector<CheckRecord>& records) {
    std::vector<CheckSummary> out;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto [it, fresh] = index.try_emplace(r.check, out.size());
        if (fresh) {
            CheckSummary s;
            s.check = r.check;
            out.push_back(s);
        }
        auto& s = out[it->second];
        ++s.count;
        if (!r.passed()) ++s.failures;
        if (r.margin() < s.worst_margin) {
            s.worst_margin = r.margin();
            s.worst_params = r.params;
        }
    }
    return out;
}

}  // namespace momentum_lab
