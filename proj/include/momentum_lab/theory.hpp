#pragma once

// Two-step transition blocks of the expected momentum dynamics and the
// spectral/norm envelopes built on them, each with a brute-force counterpart.

#include "momentum_lab/linalg.hpp"
#include "momentum_lab/process.hpp"
#include "momentum_lab/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace momentum_lab {

enum class EigenKind { complex_pair, real_equal, real_distinct };

inline const char* to_string(EigenKind k) {
    switch (k) {
        case EigenKind::complex_pair: return "complex";
        case EigenKind::real_equal: return "real-equal";
        case EigenKind::real_distinct: return "real-distinct";
    }
    return "?";
}

inline constexpr double kDiscriminantTolerance = 1e-12;
inline constexpr double kDefaultAnalysisConstant = 76800.0;

/// T = [[(1+b) - (1+b w) l, -b (1 - w l)], [1, 0]].
struct TransitionBlock {
    double lambda = 0.0;
    double beta = 0.0;
    double omega = 0.0;
    Real2x2 matrix;
    cplx eig1;
    cplx eig2;
    double discriminant = 0.0;
    EigenKind kind = EigenKind::real_distinct;

    double radius() const { return std::abs(eig1); }
};

inline TransitionBlock build_block(double lambda, double beta, double omega) {
    if (!(lambda >= 0.0 && lambda <= 1.0) || !(beta >= 0.0) || !(omega >= 0.0 && omega <= 1.0)) {
        throw std::invalid_argument("build_block: need lambda in [0,1], beta >= 0, omega in [0,1]");
    }
    TransitionBlock b;
    b.lambda = lambda;
    b.beta = beta;
    b.omega = omega;
    const double det = beta * (1.0 - omega * lambda);
    const double tr = (1.0 - lambda) + det;
    b.matrix = {(1.0 + beta) - (1.0 + beta * omega) * lambda, -det, 1.0, 0.0};
    b.discriminant = tr * tr - 4.0 * det;
    if (std::abs(b.discriminant) <= kDiscriminantTolerance) {
        b.kind = EigenKind::real_equal;
        b.eig1 = b.eig2 = tr / 2.0;
    } else if (b.discriminant < 0.0) {
        b.kind = EigenKind::complex_pair;
        const double im = 0.5 * std::sqrt(-b.discriminant);
        b.eig1 = {tr / 2.0, im};
        b.eig2 = {tr / 2.0, -im};
    } else {
        b.kind = EigenKind::real_distinct;
        const double s = std::sqrt(b.discriminant);
        const double g1 = 0.5 * (tr + std::copysign(s, tr));
        b.eig1 = g1;
        // Vieta avoids cancellation in the small root.
        b.eig2 = g1 != 0.0 ? det / g1 : 0.5 * (tr - s);
    }
    return b;
}

/// Upper bound on |gamma_1|^2 for beta = 1 - 1/phi: equality
/// (1 - 1/phi)(1 - w l) for complex and real-equal kinds,
/// (1 - phi l / 2)^2 (1 - w l)^2 for real-distinct.
inline double radius_bound(const TransitionBlock& block, double phi) {
    if (!(phi >= 2.0)) throw std::invalid_argument("radius_bound: phi must be >= 2");
    if (std::abs(block.beta - (1.0 - 1.0 / phi)) > 1e-12) {
        throw std::invalid_argument("radius_bound: block beta does not equal 1 - 1/phi");
    }
    const double shrink = 1.0 - block.omega * block.lambda;
    if (block.kind == EigenKind::real_distinct) {
        const double a = (1.0 - phi * block.lambda / 2.0) * shrink;
        return a * a;
    }
    return (1.0 - 1.0 / phi) * shrink;
}

struct SchurForm {
    Complex2x2 unitary;
    /// [[gamma_1, x], [0, gamma_2]].
    Complex2x2 upper;
    cplx corner;
    /// |U^H T U - upper|_F.
    double triangular_residual = 0.0;
    /// |U^H U - I|_F.
    double unitarity_residual = 0.0;
    /// |g1|^2 + |g2|^2 + |x|^2 - |T|_F^2.
    double frobenius_gap = 0.0;
};

/// Explicit unitary triangularization with first column along the gamma_1
/// eigenvector (gamma_1, 1).
inline SchurForm schur_form(const TransitionBlock& block) {
    SchurForm s;
    const cplx g = block.eig1;
    const double scale = 1.0 / std::sqrt(1.0 + std::norm(g));
    s.unitary = Complex2x2(g * scale, -scale, scale, std::conj(g) * scale);
    const Complex2x2 t(block.matrix);
    const Complex2x2 similar = s.unitary.adjoint() * t * s.unitary;
    s.corner = similar(0, 1);
    s.upper = Complex2x2(block.eig1, s.corner, 0.0, block.eig2);
    s.triangular_residual = (similar - s.upper).frobenius();
    s.unitarity_residual = (s.unitary.adjoint() * s.unitary - Complex2x2::identity()).frobenius();
    const double tf = block.matrix.frobenius();
    s.frobenius_gap = std::norm(block.eig1) + std::norm(block.eig2) + std::norm(s.corner) - tf * tf;
    return s;
}

/// True when phi in [2, 1/(3 sqrt(lambda))], the regime where 1 <= |x| <= 3.
inline bool admissible(double lambda, double phi) {
    return phi >= 2.0 && lambda > 0.0 && lambda <= 1.0 && phi <= 1.0 / (3.0 * std::sqrt(lambda));
}

/// Exact |T^k| for k = 0..kmax by repeated multiplication.
inline std::vector<double> block_power_norms(const TransitionBlock& block, int kmax) {
    if (kmax < 0) throw std::invalid_argument("block_power_norms: kmax must be >= 0");
    std::vector<double> out(static_cast<std::size_t>(kmax) + 1);
    Real2x2 p = Real2x2::identity();
    out[0] = 1.0;
    for (int k = 1; k <= kmax; ++k) {
        p = p * block.matrix;
        out[static_cast<std::size_t>(k)] = p.spectral_norm();
    }
    return out;
}

inline double block_power_norm(const TransitionBlock& block, int k) {
    return block_power_norms(block, k).back();
}

/// Exact |(T^T)^k T^k| = |T^k|^2 for k = 0..kmax.
inline std::vector<double> tct_norms(const TransitionBlock& block, int kmax) {
    auto out = block_power_norms(block, kmax);
    for (double& v : out) v *= v;
    return out;
}

/// (3k+2) |gamma_1|^(k-1).
inline double power_norm_bound(const TransitionBlock& block, int k) {
    return (3.0 * k + 2.0) * std::pow(block.radius(), k - 1);
}

/// h(k) = min(k/|g1|, 2/|g1 - g2|) for distinct eigenvalues, k/|g1| otherwise.
/// h(0) is taken as 1, the lower bound every h(k) respects.
inline double h_factor(const TransitionBlock& block, int k) {
    if (k == 0) return 1.0;
    const double r = block.radius();
    const double linear = static_cast<double>(k) / r;
    if (block.kind == EigenKind::real_equal) return linear;
    const double gap = std::abs(block.eig1 - block.eig2);
    return std::min(linear, 2.0 / gap);
}

/// 11 |gamma_1|^(2k) h(k)^2. With gamma_1 = 0 and k >= 1 the exact norm is
/// returned, since T is nilpotent there.
inline double tct_norm_bound(const TransitionBlock& block, int k) {
    if (k < 0) throw std::invalid_argument("tct_norm_bound: k must be >= 0");
    if (block.radius() == 0.0 && k >= 1) {
        const double p = block_power_norm(block, k);
        return p * p;
    }
    const double h = h_factor(block, k);
    return 11.0 * std::pow(block.radius(), 2 * k) * h * h;
}

/// ell(t) = max_{0<=k<=t} 11 |gamma_1|^k h(k)^2.
inline double ell(const TransitionBlock& block, int t) {
    double best = 0.0;
    double power = 1.0;
    const double r = block.radius();
    for (int k = 0; k <= t; ++k) {
        if (k > 0) power *= r;
        double h = 1.0;
        if (k > 0) h = r > 0.0 ? h_factor(block, k) : 0.0;
        best = std::max(best, 11.0 * power * h * h);
    }
    return best;
}

/// Parameters of the second-moment analysis with beta = 1 - 1/phi.
struct TheoryBoundInputs {
    /// Positive spectrum of Pi_bar, descending.
    std::vector<double> spectrum;
    double minibatch = 1.0;
    double phi = 2.0;
    double omega = 1.0;
    int horizon = 0;
    double analysis_constant = kDefaultAnalysisConstant;

    double beta() const { return 1.0 - 1.0 / phi; }
    std::size_t rank() const { return spectrum.size(); }
    double lambda_r() const { return spectrum.back(); }
    /// Runs with a smaller constant are exploratory, not certificates.
    bool certified() const { return analysis_constant >= kDefaultAnalysisConstant; }

    void validate() const {
        if (spectrum.empty()) throw std::invalid_argument("TheoryBoundInputs: empty spectrum");
        for (std::size_t i = 0; i < spectrum.size(); ++i) {
            if (!(spectrum[i] > 0.0 && spectrum[i] <= 1.0)) throw std::invalid_argument("TheoryBoundInputs: spectrum must lie in (0, 1]");
            if (i > 0 && spectrum[i] > spectrum[i - 1]) throw std::invalid_argument("TheoryBoundInputs: spectrum must be descending");
        }
        if (!(phi >= 2.0)) throw std::invalid_argument("TheoryBoundInputs: phi must be >= 2");
        if (!(minibatch >= 1.0)) throw std::invalid_argument("TheoryBoundInputs: minibatch must be >= 1");
        if (!(omega >= 0.0 && omega <= 1.0)) throw std::invalid_argument("TheoryBoundInputs: omega must lie in [0, 1]");
        if (horizon < 0) throw std::invalid_argument("TheoryBoundInputs: horizon must be >= 0");
        if (!(analysis_constant > 0.0)) throw std::invalid_argument("TheoryBoundInputs: analysis constant must be positive");
    }
};

/// Throws naming the first failed inequality of 2 <= phi <= min(m/C, 1/(3 sqrt(l_r))).
/// With `with_minibatch = false` only the phi <= 1/(3 sqrt(l_r)) side is checked.
inline void require_hypothesis(const TheoryBoundInputs& in, bool with_minibatch = true) {
    in.validate();
    const double cap = 1.0 / (3.0 * std::sqrt(in.lambda_r()));
    if (in.phi > cap) {
        std::ostringstream os;
        os << "hypothesis violated: phi <= 1/(3 sqrt(lambda_r)) fails (phi = " << in.phi << ", bound = " << cap << ")";
        throw std::invalid_argument(os.str());
    }
    if (with_minibatch && in.phi > in.minibatch / in.analysis_constant) {
        std::ostringstream os;
        os << "hypothesis violated: phi <= m/C fails (phi = " << in.phi << ", m/C = " << in.minibatch / in.analysis_constant << ")";
        throw std::invalid_argument(os.str());
    }
}

inline double noise_weight(double lambda, double m) { return 4.0 * lambda * (1.0 - lambda) / m; }

/// p_0 = 1, p_t = max_i (a_i(t) + q_i sum_{j<t} p_j a_i(t-1-j)) with exact
/// a_i(k) = |(T_i^T)^k T_i^k|.
inline std::vector<double> pt_recursion(const TheoryBoundInputs& in) {
    if (in.spectrum.empty()) throw std::invalid_argument("pt_recursion: empty spectrum");
    if (in.horizon < 0) throw std::invalid_argument("pt_recursion: horizon must be >= 0");
    const int t_max = in.horizon;
    std::vector<std::vector<double>> alpha;
    std::vector<double> q;
    for (double lam : in.spectrum) {
        alpha.push_back(tct_norms(build_block(lam, in.beta(), in.omega), t_max));
        q.push_back(noise_weight(lam, in.minibatch));
    }
    std::vector<double> p(static_cast<std::size_t>(t_max) + 1, 0.0);
    p[0] = 1.0;
    for (int t = 1; t <= t_max; ++t) {
        double best = 0.0;
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            double acc = 0.0;
            for (int j = 0; j < t; ++j) acc += p[static_cast<std::size_t>(j)] * alpha[i][static_cast<std::size_t>(t - 1 - j)];
            best = std::max(best, alpha[i][static_cast<std::size_t>(t)] + q[i] * acc);
        }
        p[static_cast<std::size_t>(t)] = best;
    }
    return p;
}

struct RhoCheck {
    double rho = 0.0;
    /// max_i (|gamma_i1| + q_i ell_i(t)).
    double lhs = 0.0;
    std::size_t worst_index = 0;
    bool certified = false;

    double margin() const { return rho - lhs; }
    bool passed() const { return lhs <= rho; }
};

/// rho = 1 - phi l_r / 4 together with the per-eigenvalue check at t = horizon.
inline RhoCheck rho_envelope(const TheoryBoundInputs& in) {
    require_hypothesis(in);
    RhoCheck out;
    out.rho = 1.0 - in.phi * in.lambda_r() / 4.0;
    out.certified = in.certified();
    out.lhs = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < in.spectrum.size(); ++i) {
        const double lam = in.spectrum[i];
        const auto block = build_block(lam, in.beta(), in.omega);
        const double v = block.radius() + noise_weight(lam, in.minibatch) * ell(block, in.horizon);
        if (v > out.lhs) {
            out.lhs = v;
            out.worst_index = i;
        }
    }
    return out;
}

/// 17 (3t+2)^2 rho^(t-1) with rho = (1 - phi l_r / 2)(1 - w l_r); bounds
/// |E Delta_{t+1}|^2 / |Delta_0|^2.
inline double bias_envelope(const TheoryBoundInputs& in, int t) {
    require_hypothesis(in, false);
    const double lr = in.lambda_r();
    const double rho = (1.0 - in.phi * lr / 2.0) * (1.0 - in.omega * lr);
    return 17.0 * (3.0 * t + 2.0) * (3.0 * t + 2.0) * std::pow(rho, t - 1);
}

/// 170 t^3 (1 - phi l_r / 4)^(t-1), without hypothesis checks.
inline double l2_envelope_value(double phi, double lambda_r, int t) {
    return 170.0 * std::pow(static_cast<double>(t), 3) * std::pow(1.0 - phi * lambda_r / 4.0, t - 1);
}

/// Bound on E|Delta_t|^2 / |Delta_0|^2 under the full hypothesis.
inline double l2_envelope(const TheoryBoundInputs& in, int t) {
    require_hypothesis(in);
    return l2_envelope_value(in.phi, in.lambda_r(), t);
}

/// 4 W_i = diag(4 l(1-l)/m, 4 w^2 l(1-l)/m) per eigenvalue.
inline std::vector<Real2x2> second_moment_block_bound(const std::vector<double>& spectrum, double m, double omega) {
    if (!(m >= 1.0)) throw std::invalid_argument("second_moment_block_bound: m must be >= 1");
    std::vector<Real2x2> out;
    out.reserve(spectrum.size());
    for (double lam : spectrum) {
        const double v = 4.0 * lam * (1.0 - lam) / m;
        out.push_back({v, 0.0, 0.0, omega * omega * v});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full-matrix and Monte Carlo counterparts

inline constexpr Index kMaxDiagonalizationDim = 64;

/// The 2d x 2d expected transition [[(1+b)I - (1+b w)L, -b(I - w L)], [I, 0]].
inline Matrix expected_transition(const std::vector<double>& spectrum, double beta, double omega) {
    const Index d = static_cast<Index>(spectrum.size());
    Matrix t = Matrix::Zero(2 * d, 2 * d);
    for (Index i = 0; i < d; ++i) {
        const double lam = spectrum[static_cast<std::size_t>(i)];
        t(i, i) = (1.0 + beta) - (1.0 + beta * omega) * lam;
        t(i, d + i) = -beta * (1.0 - omega * lam);
        t(d + i, i) = 1.0;
    }
    return t;
}

struct DiagonalizationReport {
    std::vector<cplx> full_eigenvalues;
    std::vector<cplx> block_eigenvalues;
    double max_mismatch = 0.0;
    bool passed = false;
};

/// Compares the spectrum of the full 2d x 2d matrix against the union of the
/// block spectra, matching greedily by nearest distance.
inline DiagonalizationReport verify_block_diagonalization(const std::vector<double>& spectrum, double beta, double omega,
                                                          double tol = 1e-8) {
    const Index d = static_cast<Index>(spectrum.size());
    if (d < 1 || d > kMaxDiagonalizationDim) throw std::invalid_argument("verify_block_diagonalization: need 1 <= d <= 64");
    DiagonalizationReport rep;
    Eigen::EigenSolver<Matrix> solver(expected_transition(spectrum, beta, omega), false);
    if (solver.info() != Eigen::Success) throw std::runtime_error("verify_block_diagonalization: eigensolver failed");
    for (Index i = 0; i < solver.eigenvalues().size(); ++i) rep.full_eigenvalues.push_back(solver.eigenvalues()(i));
    for (double lam : spectrum) {
        const auto b = build_block(lam, beta, omega);
        rep.block_eigenvalues.push_back(b.eig1);
        rep.block_eigenvalues.push_back(b.eig2);
    }
    std::vector<bool> used(rep.full_eigenvalues.size(), false);
    for (const cplx& z : rep.block_eigenvalues) {
        std::size_t best = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < rep.full_eigenvalues.size(); ++j) {
            if (used[j]) continue;
            const double dj = std::abs(rep.full_eigenvalues[j] - z);
            if (dj < dist) {
                dist = dj;
                best = j;
            }
        }
        used[best] = true;
        rep.max_mismatch = std::max(rep.max_mismatch, dist);
    }
    rep.passed = rep.max_mismatch <= tol;
    return rep;
}

/// One checked inequality: lhs <= rhs passes, margin = rhs - lhs.
struct CheckRecord {
    std::string check;
    std::string params;
    double lhs = 0.0;
    double rhs = 0.0;
    bool strict = false;

    double margin() const { return rhs - lhs; }
    bool passed() const { return strict ? lhs < rhs : lhs <= rhs; }
};

inline void write_check_header(std::ostream& os) { os << "check\tparams\tlhs\trhs\tmargin\tstatus\n"; }

inline void write_check(std::ostream& os, const CheckRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g", r.lhs, r.rhs, r.margin());
    os << r.check << '\t' << r.params << '\t' << buf << '\t' << (r.passed() ? "pass" : "FAIL") << '\n';
}

namespace detail {

inline double frontier(double beta, double x) {
    const double u = (1.0 - beta * x) / (1.0 + beta * x);
    return u * u;
}
inline double helper_f(double beta, double x) {
    const double s = 1.0 + beta * x;
    return (1.0 + 1.0 / (s * s)) * frontier(beta, x);
}
inline double helper_g(double beta, double x) {
    const double s = 1.0 + beta * x;
    return (1.0 - 1.0 / (s * s)) * frontier(beta, x);
}

inline std::string beta_param(double beta) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "beta=%.6g", beta);
    return buf;
}

}  // namespace detail

/// Pointwise checks of the four f/g inequalities for x >= 1, 1/2 <= beta < 1.
/// Six records per beta, each carrying the worst grid point.
inline std::vector<CheckRecord> verify_helper_inequalities(const std::vector<double>& beta_grid, const std::vector<double>& x_grid) {
    using detail::frontier;
    using detail::helper_f;
    using detail::helper_g;
    std::vector<double> xs = x_grid;
    std::sort(xs.begin(), xs.end());
    for (double x : xs)
        if (!(x >= 1.0)) throw std::invalid_argument("verify_helper_inequalities: x grid must satisfy x >= 1");
    std::vector<CheckRecord> out;
    for (double beta : beta_grid) {
        if (!(beta >= 0.5 && beta < 1.0)) throw std::invalid_argument("verify_helper_inequalities: beta must lie in [1/2, 1)");
        const double c1 = frontier(beta, 1.0);
        const std::string tag = detail::beta_param(beta);

        // Item 1: on {1 - 1/x <= f(x)}, f(x) <= f(1) and f(x) < 1.5 c1.
        CheckRecord max_at_one{"helper.f_max_at_one", tag, -std::numeric_limits<double>::infinity(), helper_f(beta, 1.0), false};
        for (double x : xs)
            if (1.0 - 1.0 / x <= helper_f(beta, x)) max_at_one.lhs = std::max(max_at_one.lhs, helper_f(beta, x));
        out.push_back(max_at_one);
        out.push_back({"helper.f_below_three_halves", tag, max_at_one.lhs, 1.5 * c1, true});

        // Item 2: roots of 1 - 1/x = frontier(x), located by sign change and bisection.
        CheckRecord item2{"helper.frontier_on_equality_set", tag, -std::numeric_limits<double>::infinity(), c1, false};
        auto gap = [&](double x) { return (1.0 - 1.0 / x) - frontier(beta, x); };
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double gi = gap(xs[i]);
            if (gi == 0.0) item2.lhs = std::max(item2.lhs, frontier(beta, xs[i]));
            if (i + 1 < xs.size() && gi * gap(xs[i + 1]) < 0.0) {
                double lo = xs[i], hi = xs[i + 1];
                for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if ((gap(mid) < 0.0) == (gap(lo) < 0.0)) lo = mid; else hi = mid;
                }
                item2.lhs = std::max(item2.lhs, frontier(beta, 0.5 * (lo + hi)));
            }
        }
        out.push_back(item2);

        // Item 3: on {1 - 1/x < frontier(x)}, g(x) > 0.8 c1. Checked as stated; at x = 1
        // g(1) = (1 - 1/(1+beta)^2) c1 <= 0.75 c1, so this record fails. The downstream
        // argument ends at lambda > 1/(8 phi^2) with phi = 1/(1 - beta); that weaker
        // bound gets its own record.
        CheckRecord item3{"helper.g_infimum", tag, 0.8 * c1, std::numeric_limits<double>::infinity(), true};
        for (double x : xs)
            if (1.0 - 1.0 / x < frontier(beta, x)) item3.rhs = std::min(item3.rhs, helper_g(beta, x));
        out.push_back(item3);
        out.push_back({"helper.g_infimum_weak", tag, (1.0 - beta) * (1.0 - beta) / 8.0, item3.rhs, true});

        // Item 4: on {1 - 1/x < g(x)}, frontier(x) > 0.5 c1.
        CheckRecord item4{"helper.frontier_infimum", tag, 0.5 * c1, std::numeric_limits<double>::infinity(), true};
        for (double x : xs)
            if (1.0 - 1.0 / x < helper_g(beta, x)) item4.rhs = std::min(item4.rhs, frontier(beta, x));
        out.push_back(item4);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Random transition products

/// Per-step Monte Carlo estimate of |E[Sigma_t^T Sigma_t]|.
struct ProductMomentStats {
    std::vector<double> norm;
    /// Standard error of v^T Sigma_t^T Sigma_t v along the top eigenvector v
    /// of the estimate.
    std::vector<double> std_error;
    std::size_t trials = 0;
};

namespace detail {

/// Y = [[(1+b)I - (1+b w) Z_t, -b(I - w Z_{t-1})], [I, 0]].
inline Matrix random_transition(const Matrix& z_now, const Matrix& z_prev, double beta, double omega) {
    const Index r = z_now.rows();
    const Matrix id = Matrix::Identity(r, r);
    Matrix y = Matrix::Zero(2 * r, 2 * r);
    y.topLeftCorner(r, r) = (1.0 + beta) * id - (1.0 + beta * omega) * z_now;
    y.topRightCorner(r, r) = -beta * (id - omega * z_prev);
    y.bottomLeftCorner(r, r) = id;
    return y;
}

template <ExplicitRateSampler S>
void product_trial(const S& sampler, const Matrix& basis, int m, double beta, double omega, int horizon, RandomStream& rng,
                   const std::function<void(int, const Matrix&)>& visit) {
    auto draw_z = [&] { return Matrix(basis.transpose() * minibatch_draw(sampler, m, rng) * basis); };
    Matrix z_prev = draw_z();
    Matrix sigma = Matrix::Identity(2 * basis.cols(), 2 * basis.cols());
    visit(0, sigma);
    for (int t = 1; t <= horizon; ++t) {
        Matrix z_now = draw_z();
        sigma = random_transition(z_now, z_prev, beta, omega) * sigma;
        visit(t, sigma);
        z_prev = std::move(z_now);
    }
}

}  // namespace detail

/// Sigma_t = Y_t ... Y_1 in the eigenbasis of Pi_bar restricted to its range.
/// Each Y_t uses a fresh mini-batch draw Z_t and the previous draw Z_{t-1};
/// Z_0 is an independent draw. Trial i runs on RandomStream(seed, i, 1), so
/// the result does not depend on the thread count.
template <ExplicitRateSampler S>
ProductMomentStats product_second_moment(const S& sampler, int m, double beta, double omega, int horizon, std::size_t trials,
                                         std::uint64_t seed, unsigned threads = worker_count()) {
    if (trials < 2) throw std::invalid_argument("product_second_moment: need at least two trials");
    const auto eig = sym_eig(sampler.average_rate(), true);
    const Matrix basis = eig.range_basis();
    const Index dim = 2 * basis.cols();
    const std::size_t steps = static_cast<std::size_t>(horizon) + 1;

    constexpr std::size_t chunk = 256;
    const std::size_t chunks = (trials + chunk - 1) / chunk;

    // Pass 1: mean of Sigma^T Sigma.
    std::vector<std::vector<Matrix>> partial(chunks, std::vector<Matrix>(steps, Matrix::Zero(dim, dim)));
    parallel_for(chunks, [&](std::size_t c) {
        for (std::size_t i = c * chunk; i < std::min(trials, (c + 1) * chunk); ++i) {
            RandomStream rng(seed, i, 1);
            detail::product_trial(sampler, basis, m, beta, omega, horizon, rng,
                                  [&](int t, const Matrix& s) { partial[c][static_cast<std::size_t>(t)] += s.transpose() * s; });
        }
    }, threads);
    std::vector<Matrix> mean(steps, Matrix::Zero(dim, dim));
    for (const auto& part : partial)
        for (std::size_t t = 0; t < steps; ++t) mean[t] += part[t];
    std::vector<Vector> top(steps);
    ProductMomentStats out;
    out.trials = trials;
    out.norm.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        mean[t] /= static_cast<double>(trials);
        const auto e = sym_eig(0.5 * (mean[t] + mean[t].transpose()));
        out.norm[t] = e.eigenvalues(0);
        top[t] = e.basis.col(0);
    }

    // Pass 2: replay the same trials for the spread along the top eigenvector.
    std::vector<std::vector<double>> sq(chunks, std::vector<double>(steps, 0.0));
    parallel_for(chunks, [&](std::size_t c) {
        for (std::size_t i = c * chunk; i < std::min(trials, (c + 1) * chunk); ++i) {
            RandomStream rng(seed, i, 1);
            detail::product_trial(sampler, basis, m, beta, omega, horizon, rng, [&](int t, const Matrix& s) {
                const std::size_t k = static_cast<std::size_t>(t);
                const double v = (s * top[k]).squaredNorm() - out.norm[k];
                sq[c][k] += v * v;
            });
        }
    }, threads);
    out.std_error.assign(steps, 0.0);
    for (const auto& part : sq)
        for (std::size_t t = 0; t < steps; ++t) out.std_error[t] += part[t];
    for (double& v : out.std_error) v = std::sqrt(v / static_cast<double>(trials - 1) / static_cast<double>(trials));
    return out;
}

/// Monte Carlo estimate of E[(Y - EY)^T (Y - EY)] in the range eigenbasis,
/// with entrywise standard errors. Draws Z_t and Z_{t-1} independently.
struct TransitionNoiseEstimate {
    Matrix estimate;
    Matrix std_error;
    std::vector<double> spectrum;
};

template <ExplicitRateSampler S>
TransitionNoiseEstimate transition_noise(const S& sampler, int m, double beta, double omega, std::size_t draws, std::uint64_t seed) {
    if (draws < 2) throw std::invalid_argument("transition_noise: need at least two draws");
    const auto eig = sym_eig(sampler.average_rate(), true);
    const Matrix basis = eig.range_basis();
    const Index r = basis.cols();
    Matrix lam = Matrix::Zero(r, r);
    TransitionNoiseEstimate out;
    for (Index i = 0; i < r; ++i) {
        lam(i, i) = eig.eigenvalues(i);
        out.spectrum.push_back(eig.eigenvalues(i));
    }
    const Matrix mean_y = detail::random_transition(lam, lam, beta, omega);
    Matrix sum = Matrix::Zero(2 * r, 2 * r);
    Matrix sum_sq = Matrix::Zero(2 * r, 2 * r);
    RandomStream rng(seed, 0, 2);
    for (std::size_t k = 0; k < draws; ++k) {
        const Matrix z_now = basis.transpose() * minibatch_draw(sampler, m, rng) * basis;
        const Matrix z_prev = basis.transpose() * minibatch_draw(sampler, m, rng) * basis;
        const Matrix dev = detail::random_transition(z_now, z_prev, beta, omega) - mean_y;
        const Matrix v = dev.transpose() * dev;
        sum += v;
        sum_sq += v.cwiseProduct(v);
    }
    const double n = static_cast<double>(draws);
    out.estimate = sum / n;
    const Matrix var = (sum_sq / n - out.estimate.cwiseProduct(out.estimate)).cwiseMax(0.0) * (n / (n - 1.0));
    out.std_error = (var / n).cwiseSqrt();
    return out;
}

/// The 4 W_i blocks laid out like transition_noise (first all current-step
/// coordinates, then all previous-step ones).
inline Matrix second_moment_envelope_matrix(const std::vector<double>& spectrum, double m, double omega) {
    const auto blocks = second_moment_block_bound(spectrum, m, omega);
    const Index r = static_cast<Index>(spectrum.size());
    Matrix out = Matrix::Zero(2 * r, 2 * r);
    for (Index i = 0; i < r; ++i) {
        out(i, i) = blocks[static_cast<std::size_t>(i)].a;
        out(r + i, r + i) = blocks[static_cast<std::size_t>(i)].d;
    }
    return out;
}

}  // namespace momentum_lab
