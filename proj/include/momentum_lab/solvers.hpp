#pragma once

// Randomized (block) Kaczmarz and block coordinate descent with mini-batch
// averaging and heavy-ball / Nesterov momentum.

#include "momentum_lab/linalg.hpp"
#include "momentum_lab/process.hpp"
#include "momentum_lab/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace momentum_lab {

enum class ProblemKind {
    /// Row-consistent least squares: A w = y has a solution.
    consistent,
    /// Positive definite system K w = y.
    positive_definite,
};

struct LinearProblem {
    ProblemKind kind = ProblemKind::positive_definite;
    Matrix matrix;
    Vector rhs;
    std::optional<Vector> solution;

    static LinearProblem consistent(Matrix a, Vector y, std::optional<Vector> w_star = std::nullopt) {
        LinearProblem p{ProblemKind::consistent, std::move(a), std::move(y), std::move(w_star)};
        p.validate();
        return p;
    }
    static LinearProblem positive_definite(Matrix k, Vector y, std::optional<Vector> w_star = std::nullopt) {
        LinearProblem p{ProblemKind::positive_definite, std::move(k), std::move(y), std::move(w_star)};
        p.validate();
        return p;
    }

    Index rows() const { return matrix.rows(); }
    Index unknowns() const { return matrix.cols(); }

    void validate() const {
        require_finite(matrix, "LinearProblem");
        if (rhs.size() != matrix.rows()) throw std::invalid_argument("LinearProblem: rhs size mismatch");
        if (kind == ProblemKind::positive_definite && !is_symmetric(matrix)) {
            throw std::invalid_argument("LinearProblem: positive definite system must be symmetric");
        }
        if (solution) {
            if (solution->size() != matrix.cols()) throw std::invalid_argument("LinearProblem: solution size mismatch");
            const double scale = std::max(rhs.norm(), std::numeric_limits<double>::min());
            if ((matrix * *solution - rhs).norm() / scale > 1e-10) {
                throw std::invalid_argument("LinearProblem: provided solution does not satisfy the system");
            }
        }
    }

    Vector residual(const Vector& w) const { return matrix * w - rhs; }
    double relative_residual(const Vector& w) const { return residual(w).norm() / rhs.norm(); }
};

enum class SamplingScheme {
    /// Uniformly random k-subsets.
    uniform_block,
    /// Single rows with probability proportional to |A_i|^2.
    row_weighted,
    /// Single coordinates with probability proportional to K_ii.
    coord_weighted,
};

struct BlockScheme {
    SamplingScheme scheme = SamplingScheme::uniform_block;
    std::size_t block_size = 1;

    static BlockScheme uniform(std::size_t k) { return {SamplingScheme::uniform_block, k}; }
    static BlockScheme row_weighted() { return {SamplingScheme::row_weighted, 1}; }
    static BlockScheme coord_weighted() { return {SamplingScheme::coord_weighted, 1}; }
};

/// Draws index sets for a problem under a scheme.
class BlockSampler {
public:
    BlockSampler(const LinearProblem& problem, BlockScheme scheme) : scheme_(scheme), n_(static_cast<std::size_t>(problem.rows())) {
        if (scheme_.block_size < 1 || scheme_.block_size > n_) {
            throw std::invalid_argument("BlockSampler: block size must lie in [1, rows]");
        }
        switch (scheme_.scheme) {
            case SamplingScheme::uniform_block:
                break;
            case SamplingScheme::row_weighted: {
                if (scheme_.block_size != 1) throw std::invalid_argument("BlockSampler: weighted schemes use single indices");
                std::vector<double> w(n_);
                for (std::size_t i = 0; i < n_; ++i) w[i] = problem.matrix.row(static_cast<Index>(i)).squaredNorm();
                set_weights(w);
                break;
            }
            case SamplingScheme::coord_weighted: {
                if (scheme_.block_size != 1) throw std::invalid_argument("BlockSampler: weighted schemes use single indices");
                if (problem.kind != ProblemKind::positive_definite) {
                    throw std::invalid_argument("BlockSampler: coordinate weighting needs a positive definite system");
                }
                std::vector<double> w(n_);
                for (std::size_t i = 0; i < n_; ++i) w[i] = problem.matrix(static_cast<Index>(i), static_cast<Index>(i));
                set_weights(w);
                break;
            }
        }
    }

    const BlockScheme& scheme() const { return scheme_; }
    std::size_t block_size() const { return scheme_.block_size; }
    const std::vector<double>& probabilities() const { return probabilities_; }

    std::vector<std::size_t> draw(RandomStream& rng) const {
        if (scheme_.scheme == SamplingScheme::uniform_block) {
            thread_local std::vector<std::size_t> scratch;
            scratch.clear();
            return sample_subset(n_, scheme_.block_size, rng, scratch);
        }
        return {sample_weighted(cumulative_, rng)};
    }

private:
    void set_weights(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) total += x;
        if (!(total > 0.0)) throw std::invalid_argument("BlockSampler: all sampling weights are zero");
        probabilities_.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) probabilities_[i] = w[i] / total;
        cumulative_ = cumulative_weights(probabilities_);
    }

    BlockScheme scheme_;
    std::size_t n_;
    std::vector<double> probabilities_;
    std::vector<double> cumulative_;
};

inline constexpr double kBlockPinvTolerance = 1e-10;

namespace detail {

inline Matrix gather_rows(const Matrix& a, const std::vector<std::size_t>& s) {
    Matrix out(static_cast<Index>(s.size()), a.cols());
    for (std::size_t i = 0; i < s.size(); ++i) out.row(static_cast<Index>(i)) = a.row(static_cast<Index>(s[i]));
    return out;
}

inline Matrix gather_block(const Matrix& k, const std::vector<std::size_t>& s) {
    const Index b = static_cast<Index>(s.size());
    Matrix out(b, b);
    for (Index i = 0; i < b; ++i)
        for (Index j = 0; j < b; ++j) out(i, j) = k(static_cast<Index>(s[static_cast<std::size_t>(i)]), static_cast<Index>(s[static_cast<std::size_t>(j)]));
    return out;
}

inline Vector gather(const Vector& v, const std::vector<std::size_t>& s) {
    Vector out(static_cast<Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) out(static_cast<Index>(i)) = v(static_cast<Index>(s[i]));
    return out;
}

/// (K_SS)^dagger r_S, with r_S already restricted to the block.
inline Vector cd_block_solve(const Matrix& k, const std::vector<std::size_t>& s, const Vector& rs) {
    if (s.size() == 1) {
        const double kss = k(static_cast<Index>(s[0]), static_cast<Index>(s[0]));
        Vector z(1);
        z(0) = kss > 0.0 ? rs(0) / kss : 0.0;
        return z;
    }
    return pinv_psd(gather_block(k, s), kBlockPinvTolerance) * rs;
}

/// A_S^dagger r_S, with r_S already restricted to the block.
inline Vector rk_block_solve(const Matrix& a, const std::vector<std::size_t>& s, const Vector& rs) {
    if (s.size() == 1) {
        const auto row = a.row(static_cast<Index>(s[0]));
        const double nrm2 = row.squaredNorm();
        if (nrm2 == 0.0) return Vector::Zero(a.cols());
        return row.transpose() * (rs(0) / nrm2);
    }
    return pinv(gather_rows(a, s), kBlockPinvTolerance) * rs;
}

/// Adds the single-block direction for residual r on block s into `d`.
inline void add_direction(const LinearProblem& p, const std::vector<std::size_t>& s, const Vector& r, Vector& d) {
    if (p.kind == ProblemKind::positive_definite) {
        const Vector z = cd_block_solve(p.matrix, s, gather(r, s));
        for (std::size_t i = 0; i < s.size(); ++i) d(static_cast<Index>(s[i])) += z(static_cast<Index>(i));
    } else {
        d += rk_block_solve(p.matrix, s, gather(r, s));
    }
}

}  // namespace detail

/// d = A_S^dagger (A_S w - y_S); w - d is the projection of w onto {A_S w = y_S}.
inline Vector rk_direction(const Matrix& a, const Vector& y, const Vector& w, const std::vector<std::size_t>& s) {
    if (s.empty()) throw std::invalid_argument("rk_direction: empty index set");
    const Matrix as = detail::gather_rows(a, s);
    const Vector rs = as * w - detail::gather(y, s);
    return pinv(as, kBlockPinvTolerance) * rs;
}

/// d = I_S^T (K_SS)^dagger (K w - y)_S; zero outside S.
inline Vector cd_direction(const Matrix& k, const Vector& y, const Vector& w, const std::vector<std::size_t>& s) {
    if (s.empty()) throw std::invalid_argument("cd_direction: empty index set");
    Vector rs(static_cast<Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Index row = static_cast<Index>(s[i]);
        rs(static_cast<Index>(i)) = k.row(row).dot(w) - y(row);
    }
    const Vector z = pinv_psd(detail::gather_block(k, s), kBlockPinvTolerance) * rs;
    Vector d = Vector::Zero(w.size());
    for (std::size_t i = 0; i < s.size(); ++i) d(static_cast<Index>(s[i])) = z(static_cast<Index>(i));
    return d;
}

/// Average of m single-block directions for the current residual, each on an
/// independently drawn block. Blocks are drawn and summed in index order.
inline Vector minibatch_direction_from_residual(const LinearProblem& problem, const BlockSampler& sampler,
                                                const Vector& residual, int m, RandomStream& rng) {
    if (m < 1) throw std::invalid_argument("minibatch_direction: m must be >= 1");
    Vector d = Vector::Zero(problem.unknowns());
    for (int i = 0; i < m; ++i) detail::add_direction(problem, sampler.draw(rng), residual, d);
    if (m > 1) d /= static_cast<double>(m);
    return d;
}

inline Vector minibatch_direction(const LinearProblem& problem, const BlockSampler& sampler, const Vector& w,
                                  int m, RandomStream& rng) {
    return minibatch_direction_from_residual(problem, sampler, problem.residual(w), m, rng);
}

/// Solution-space momentum iterate.
///
/// Keeps w_t and the previous look-ahead point a_{t-1} = w_{t-1} - omega d_{t-1}.
/// One step is
///   a_t     = w_t - omega d_t
///   w_{t+1} = w_t - alpha d_t + beta (a_t - a_{t-1}).
/// With omega = alpha = 1, a_t is the Nesterov point x_{t+1} and the update is
/// w_{t+1} = x_{t+1} + beta (x_{t+1} - x_t). The chain starts with a_{-1} = w_0.
class MomentumChain {
public:
    MomentumChain(const LinearProblem& problem, const BlockSampler& sampler, Vector w0)
        : problem_(&problem), sampler_(&sampler), w_(std::move(w0)) {
        if (w_.size() != problem.unknowns()) throw std::invalid_argument("MomentumChain: start vector size mismatch");
        lookahead_ = w_;
        residual_ = problem.residual(w_);
    }

    void step(const MomentumConfig& config, RandomStream& rng) {
        const Vector d = minibatch_direction_from_residual(*problem_, *sampler_, residual_, config.minibatch, rng);
        if (config.beta == 0.0) {
            lookahead_ = w_ - config.omega * d;
            w_ -= config.alpha * d;
        } else {
            Vector a = w_ - config.omega * d;
            w_ += -config.alpha * d + config.beta * (a - lookahead_);
            lookahead_ = std::move(a);
        }
        residual_ = problem_->residual(w_);
        ++steps_;
    }

    const Vector& iterate() const { return w_; }
    const Vector& lookahead() const { return lookahead_; }
    const Vector& residual() const { return residual_; }
    double relative_residual() const { return residual_.norm() / problem_->rhs.norm(); }
    long steps() const { return steps_; }

    /// Copies (w, a) from another chain over the same problem.
    void copy_state_from(const MomentumChain& other) {
        w_ = other.w_;
        lookahead_ = other.lookahead_;
        residual_ = other.residual_;
    }

private:
    const LinearProblem* problem_;
    const BlockSampler* sampler_;
    Vector w_;
    Vector lookahead_;
    Vector residual_;
    long steps_ = 0;
};

struct ResidualSample {
    long iteration = 0;
    double relative_residual = 0.0;
};

struct SolverRunResult {
    long iterations = 0;
    long rows_sampled = 0;
    std::vector<ResidualSample> history;
    double final_beta = 0.0;
    double final_residual = 0.0;
    /// |w - w*| / |w*| when the solution is known.
    std::optional<double> final_error;
    bool converged = false;
    bool diverged = false;
    double wall_ms = 0.0;
    Vector solution;
};

/// Records every iteration up to 1000, then every ceil(max_iters / 1000)-th.
class ResidualHistory {
public:
    explicit ResidualHistory(long max_iters) : stride_(std::max<long>(1, (max_iters + 999) / 1000)) {}
    void record(long t, double r, std::vector<ResidualSample>& out) const {
        if (t <= 1000 || t % stride_ == 0) out.push_back({t, r});
    }

private:
    long stride_;
};

inline constexpr double kDivergenceFactor = 1e12;

/// Runs an existing chain at fixed momentum until the relative residual drops to
/// `tolerance`, diverges, or `max_iters` further steps have been taken.
inline SolverRunResult run_chain(MomentumChain& chain, const LinearProblem& problem, const BlockSampler& sampler,
                                 const MomentumConfig& config, double tolerance, long max_iters, RandomStream& rng) {
    const auto start = std::chrono::steady_clock::now();
    SolverRunResult res;
    res.final_beta = config.beta;
    const ResidualHistory history(max_iters);
    const double initial = chain.relative_residual();
    double current = initial;
    history.record(0, current, res.history);
    long t = 0;
    if (current <= tolerance) res.converged = true;
    while (!res.converged && t < max_iters) {
        chain.step(config, rng);
        ++t;
        current = chain.relative_residual();
        history.record(t, current, res.history);
        if (current <= tolerance) {
            res.converged = true;
        } else if (!std::isfinite(current) || current > kDivergenceFactor * std::max(initial, 1e-300)) {
            res.diverged = true;
            break;
        }
    }
    if (res.history.empty() || res.history.back().iteration != t) res.history.push_back({t, current});
    res.iterations = t;
    res.rows_sampled = t * static_cast<long>(config.minibatch) * static_cast<long>(sampler.block_size());
    res.final_residual = current;
    res.solution = chain.iterate();
    if (problem.solution) {
        const double nrm = problem.solution->norm();
        res.final_error = (chain.iterate() - *problem.solution).norm() / (nrm > 0.0 ? nrm : 1.0);
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return res;
}

/// Mini-batch RK/CD with momentum from w_0 = 0; alpha is fixed at 1.
/// Non-convergence is reported through the result flags.
inline SolverRunResult momentum_solve(const LinearProblem& problem, const BlockScheme& scheme,
                                      MomentumConfig config, double tolerance, long max_iters, RandomStream& rng) {
    if (!(tolerance > 0.0)) throw std::invalid_argument("momentum_solve: tolerance must be positive");
    config.alpha = 1.0;
    config.validate();
    const BlockSampler sampler(problem, scheme);
    MomentumChain chain(problem, sampler, Vector::Zero(problem.unknowns()));
    return run_chain(chain, problem, sampler, config, tolerance, max_iters, rng);
}

// ---------------------------------------------------------------------------
// Error-space views of the solvers, usable wherever a RateSampler is expected.

/// Block coordinate descent in K^{1/2}-space:
/// Pi_S = K^{1/2} I_S (K_SS)^dagger I_S^T K^{1/2}.
class CoordinateRate {
public:
    CoordinateRate(const LinearProblem& problem, BlockScheme scheme)
        : k_(problem.matrix), root_(psd_sqrt(problem.matrix)), sampler_(problem, scheme) {
        if (problem.kind != ProblemKind::positive_definite) throw std::invalid_argument("CoordinateRate: needs a positive definite system");
    }

    Index dimension() const { return k_.rows(); }
    const Matrix& average_rate() const {
        if (!average_) throw std::logic_error("CoordinateRate: average rate not set");
        return *average_;
    }
    void set_average_rate(Matrix m) { average_ = std::move(m); }
    const Matrix& root() const { return root_; }
    const BlockSampler& blocks() const { return sampler_; }

    /// Pi_S for a given block.
    Matrix block_rate(const std::vector<std::size_t>& s) const {
        const Matrix cols = detail::gather_rows(root_, s);  // root is symmetric: rows == columns
        return cols.transpose() * pinv_psd(detail::gather_block(k_, s), kBlockPinvTolerance) * cols;
    }

    void apply_draw(const Vector& v, Vector& out, RandomStream& rng) const {
        const auto s = sampler_.draw(rng);
        Vector u(static_cast<Index>(s.size()));
        for (std::size_t i = 0; i < s.size(); ++i) u(static_cast<Index>(i)) = root_.row(static_cast<Index>(s[i])).dot(v);
        const Vector z = detail::cd_block_solve(k_, s, u);
        out.setZero(v.size());
        for (std::size_t i = 0; i < s.size(); ++i) out += z(static_cast<Index>(i)) * root_.col(static_cast<Index>(s[i]));
    }
    Matrix draw(RandomStream& rng) const { return block_rate(sampler_.draw(rng)); }

private:
    Matrix k_;
    Matrix root_;
    BlockSampler sampler_;
    std::optional<Matrix> average_;
};

/// Block Kaczmarz in error space: Pi_S = A_S^dagger A_S.
class KaczmarzRate {
public:
    KaczmarzRate(const LinearProblem& problem, BlockScheme scheme) : a_(problem.matrix), sampler_(problem, scheme) {}

    Index dimension() const { return a_.cols(); }
    const Matrix& average_rate() const {
        if (!average_) throw std::logic_error("KaczmarzRate: average rate not set");
        return *average_;
    }
    void set_average_rate(Matrix m) { average_ = std::move(m); }
    const BlockSampler& blocks() const { return sampler_; }

    Matrix block_rate(const std::vector<std::size_t>& s) const {
        const Matrix as = detail::gather_rows(a_, s);
        return pinv(as, kBlockPinvTolerance) * as;
    }
    void apply_draw(const Vector& v, Vector& out, RandomStream& rng) const {
        const auto s = sampler_.draw(rng);
        const Matrix as = detail::gather_rows(a_, s);
        out = pinv(as, kBlockPinvTolerance) * (as * v);
    }
    Matrix draw(RandomStream& rng) const { return block_rate(sampler_.draw(rng)); }

private:
    Matrix a_;
    BlockSampler sampler_;
    std::optional<Matrix> average_;
};

// ---------------------------------------------------------------------------
// Condition numbers

struct ConditionEstimate {
    double kappa = 0.0;
    /// True when the average rate was estimated by Monte Carlo.
    bool estimated = false;
    Matrix average_rate;
};

inline constexpr std::size_t kEnumerationLimit = 100000;
inline constexpr std::size_t kAverageRateDraws = 100000;

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    return c;
}

/// Calls f(subset) for every k-subset of [0, n) in lexicographic order.
template <class F>
void for_each_subset(std::size_t n, std::size_t k, F&& f) {
    std::vector<std::size_t> s(k);
    for (std::size_t i = 0; i < k; ++i) s[i] = i;
    for (;;) {
        f(s);
        std::size_t i = k;
        while (i > 0 && s[i - 1] == n - k + i - 1) --i;
        if (i == 0) return;
        ++s[i - 1];
        for (std::size_t j = i; j < k; ++j) s[j] = s[j - 1] + 1;
    }
}

template <class Rate>
Matrix average_block_rate(const Rate& rate, std::size_t n, std::size_t k, bool& estimated, std::uint64_t seed) {
    const Index d = rate.dimension();
    Matrix sum = Matrix::Zero(d, d);
    if (n <= 20 && binomial(n, k) <= static_cast<double>(kEnumerationLimit)) {
        double count = 0.0;
        for_each_subset(n, k, [&](const std::vector<std::size_t>& s) {
            sum += rate.block_rate(s);
            count += 1.0;
        });
        estimated = false;
        return sum / count;
    }
    RandomStream rng(seed, 0, 0x6b617070u);
    for (std::size_t i = 0; i < kAverageRateDraws; ++i) sum += rate.block_rate(rate.blocks().draw(rng));
    estimated = true;
    return sum / static_cast<double>(kAverageRateDraws);
}

}  // namespace detail

/// Average rate Pi_bar of a scheme, closed form for weighted single-index
/// schemes and enumeration or Monte Carlo for uniform blocks.
inline ConditionEstimate average_rate(const LinearProblem& problem, const BlockScheme& scheme, std::uint64_t seed = 0) {
    ConditionEstimate est;
    const Matrix& m = problem.matrix;
    if (problem.kind == ProblemKind::positive_definite) {
        if (scheme.scheme == SamplingScheme::coord_weighted) {
            est.average_rate = m / m.trace();
        } else if (scheme.scheme == SamplingScheme::uniform_block) {
            CoordinateRate rate(problem, scheme);
            est.average_rate = detail::average_block_rate(rate, static_cast<std::size_t>(m.rows()), scheme.block_size, est.estimated, seed);
        } else {
            throw std::invalid_argument("average_rate: row weighting applies to consistent systems");
        }
    } else {
        if (scheme.scheme == SamplingScheme::row_weighted) {
            est.average_rate = m.transpose() * m / m.squaredNorm();
        } else if (scheme.scheme == SamplingScheme::uniform_block) {
            KaczmarzRate rate(problem, scheme);
            est.average_rate = detail::average_block_rate(rate, static_cast<std::size_t>(m.rows()), scheme.block_size, est.estimated, seed);
        } else {
            throw std::invalid_argument("average_rate: coordinate weighting applies to positive definite systems");
        }
    }
    est.average_rate = 0.5 * (est.average_rate + est.average_rate.transpose());
    return est;
}

/// kappa = 1 / lambda_min^+(Pi_bar) with alpha = 1.
inline ConditionEstimate condition_number(const LinearProblem& problem, const BlockScheme& scheme, std::uint64_t seed = 0) {
    ConditionEstimate est = average_rate(problem, scheme, seed);
    const auto eig = sym_eig(est.average_rate, true);
    if (eig.rank == 0) throw std::invalid_argument("condition_number: average rate is zero");
    est.kappa = 1.0 / eig.lambda_min_positive();
    return est;
}

/// kappa_CD = tr(K) |K^dagger| for weighted single-coordinate descent.
inline double kappa_cd(const Matrix& k) {
    const auto eig = sym_eig(k, true);
    return k.trace() / eig.lambda_min_positive();
}

/// kappa_RK = |A|_F^2 |A^dagger|^2 for weighted single-row Kaczmarz.
inline double kappa_rk(const Matrix& a) {
    Eigen::JacobiSVD<Matrix> svd(a);
    const Vector& s = svd.singularValues();
    double smin = 0.0;
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > kRankTolerance * s(0)) smin = s(i);
    return a.squaredNorm() / (smin * smin);
}

// ---------------------------------------------------------------------------
// Momentum schedules

/// Piecewise schedule: 0 below c1, 1 - c1/(2m) on [c1, c2 sqrt(kappa)],
/// 1 - c1/(2 c2 sqrt(kappa)) above. Boundary points take the middle branch.
inline double beta_schedule(double m, double kappa, double c1, double c2) {
    if (!(m >= 1.0) || !(kappa >= 1.0) || !(c1 > 0.0) || !(c2 > 0.0)) {
        throw std::invalid_argument("beta_schedule: need m >= 1, kappa >= 1, c1 > 0, c2 > 0");
    }
    const double knee = c2 * std::sqrt(kappa);
    if (m < c1) return 0.0;
    if (m <= knee) return 1.0 - c1 / (2.0 * m);
    return 1.0 - c1 / (2.0 * knee);
}

/// beta = 1 - 1/m, capped at 1 - 1/(3 sqrt(kappa)) when kappa is known.
inline double practical_beta(double m, std::optional<double> kappa = std::nullopt) {
    if (!(m >= 1.0)) throw std::invalid_argument("practical_beta: m must be >= 1");
    const double beta = 1.0 - 1.0 / m;
    if (!kappa) return beta;
    return std::min(beta, 1.0 - 1.0 / (3.0 * std::sqrt(*kappa)));
}

}  // namespace momentum_lab
