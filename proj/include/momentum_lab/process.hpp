#pragma once

// Stochastic contraction and momentum processes in error space.
//
// A contraction step maps Delta -> (I - alpha * Pi) Delta for a freshly drawn
// rate matrix 0 <= Pi <= I with E[Pi] = Pi_bar. The momentum process adds
// beta * [(Delta_t - omega Pi_t Delta_t) - (Delta_{t-1} - omega Pi_{t-1} Delta_{t-1})].

#include "momentum_lab/linalg.hpp"
#include "momentum_lab/random.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace momentum_lab {

/// Step size alpha, momentum beta, momentum-gradient weight omega and
/// mini-batch size m. omega = 0 is heavy ball, omega = alpha is Nesterov.
struct MomentumConfig {
    double alpha = 1.0;
    double beta = 0.0;
    double omega = 0.0;
    int minibatch = 1;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("MomentumConfig: alpha must lie in [0, 1]");
        if (!(beta >= 0.0)) throw std::invalid_argument("MomentumConfig: beta must be >= 0");
        if (!(omega >= 0.0 && omega <= alpha)) throw std::invalid_argument("MomentumConfig: omega must lie in [0, alpha]");
        if (minibatch < 1) throw std::invalid_argument("MomentumConfig: minibatch must be >= 1");
    }

    static MomentumConfig heavy_ball(double beta, int m) { return {1.0, beta, 0.0, m}; }
    static MomentumConfig nesterov(double beta, int m) { return {1.0, beta, 1.0, m}; }
};

/// A source of random rate matrices. `apply_draw` writes Pi v for a fresh
/// draw Pi; samplers never need to materialize Pi for this.
template <class S>
concept RateSampler = requires(const S& s, const Vector& v, Vector& out, RandomStream& rng) {
    { s.dimension() } -> std::convertible_to<Index>;
    { s.average_rate() } -> std::convertible_to<const Matrix&>;
    s.apply_draw(v, out, rng);
};

/// A sampler that can also hand out an explicit Pi.
template <class S>
concept ExplicitRateSampler = RateSampler<S> && requires(const S& s, RandomStream& rng) {
    { s.draw(rng) } -> std::convertible_to<Matrix>;
};

/// Pi = Pi_bar on every draw.
class FixedRate {
public:
    explicit FixedRate(Matrix rate) : rate_(std::move(rate)) { require_finite(rate_, "FixedRate"); }

    Index dimension() const { return rate_.rows(); }
    const Matrix& average_rate() const { return rate_; }
    void apply_draw(const Vector& v, Vector& out, RandomStream&) const { out.noalias() = rate_ * v; }
    Matrix draw(RandomStream&) const { return rate_; }

private:
    Matrix rate_;
};

/// Finite distribution over explicit PSD matrices.
class DiscreteRate {
public:
    DiscreteRate(std::vector<Matrix> outcomes, std::vector<double> weights)
        : outcomes_(std::move(outcomes)), weights_(std::move(weights)) {
        if (outcomes_.empty() || outcomes_.size() != weights_.size()) {
            throw std::invalid_argument("DiscreteRate: need one weight per outcome");
        }
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw std::invalid_argument("DiscreteRate: weights must be non-negative");
            total += w;
        }
        if (!(total > 0.0)) throw std::invalid_argument("DiscreteRate: weights sum to zero");
        for (double& w : weights_) w /= total;
        cumulative_ = cumulative_weights(weights_);
        const Index n = outcomes_.front().rows();
        average_ = Matrix::Zero(n, n);
        for (std::size_t i = 0; i < outcomes_.size(); ++i) average_ += weights_[i] * outcomes_[i];
    }

    /// Single-row Kaczmarz in error space: Pi_i = a_i a_i^T / |a_i|^2 with
    /// probability proportional to |a_i|^2.
    static DiscreteRate kaczmarz_rows(const Matrix& a) {
        std::vector<Matrix> out;
        std::vector<double> w;
        for (Index i = 0; i < a.rows(); ++i) {
            const double nrm2 = a.row(i).squaredNorm();
            if (nrm2 == 0.0) continue;
            out.emplace_back(a.row(i).transpose() * a.row(i) / nrm2);
            w.push_back(nrm2);
        }
        return {std::move(out), std::move(w)};
    }

    /// Single-coordinate descent in K^{1/2}-space: Pi_i = K^{1/2} e_i e_i^T K^{1/2} / K_ii
    /// with probability proportional to K_ii. The average rate is K / tr(K).
    static DiscreteRate coordinates(const Matrix& k) {
        const Matrix root = psd_sqrt(k);
        std::vector<Matrix> out;
        std::vector<double> w;
        for (Index i = 0; i < k.rows(); ++i) {
            if (k(i, i) <= 0.0) continue;
            out.emplace_back(root.col(i) * root.col(i).transpose() / k(i, i));
            w.push_back(k(i, i));
        }
        return {std::move(out), std::move(w)};
    }

    Index dimension() const { return average_.rows(); }
    const Matrix& average_rate() const { return average_; }
    std::size_t outcome_count() const { return outcomes_.size(); }
    const Matrix& outcome(std::size_t i) const { return outcomes_[i]; }
    double weight(std::size_t i) const { return weights_[i]; }

    std::size_t draw_index(RandomStream& rng) const { return sample_weighted(cumulative_, rng); }
    Matrix draw(RandomStream& rng) const { return outcomes_[draw_index(rng)]; }
    void apply_draw(const Vector& v, Vector& out, RandomStream& rng) const {
        out.noalias() = outcomes_[draw_index(rng)] * v;
    }

private:
    std::vector<Matrix> outcomes_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
    Matrix average_;
};

/// Pi^[m] v for the average of m independent draws, summed in draw order.
template <RateSampler S>
void apply_minibatch(const S& sampler, int m, const Vector& v, Vector& out, RandomStream& rng) {
    if (m == 1) {
        sampler.apply_draw(v, out, rng);
        return;
    }
    out.setZero(v.size());
    Vector one(v.size());
    for (int i = 0; i < m; ++i) {
        sampler.apply_draw(v, one, rng);
        out += one;
    }
    out /= static_cast<double>(m);
}

/// Explicit Pi^[m] = (1/m) sum of m independent draws.
template <ExplicitRateSampler S>
Matrix minibatch_draw(const S& sampler, int m, RandomStream& rng) {
    if (m < 1) throw std::invalid_argument("minibatch_draw: m must be >= 1");
    Matrix out = sampler.draw(rng);
    for (int i = 1; i < m; ++i) out += sampler.draw(rng);
    if (m > 1) out /= static_cast<double>(m);
    return out;
}

/// Iterate Delta_t, the previous iterate Delta_{t-1} and the cached direction
/// Pi_{t-1} Delta_{t-1}. Starts from Delta_{-1} = 0.
struct ProcessState {
    Vector current;
    Vector previous;
    Vector previous_direction;
    long step = 0;

    static ProcessState start(const Vector& delta0) {
        return {delta0, Vector::Zero(delta0.size()), Vector::Zero(delta0.size()), 0};
    }
};

template <RateSampler S>
ProcessState contraction_step(const ProcessState& state, const S& sampler, double alpha,
                              RandomStream& rng, int minibatch = 1) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("contraction_step: alpha must lie in [0, 1]");
    ProcessState next;
    Vector direction;
    apply_minibatch(sampler, minibatch, state.current, direction, rng);
    next.current = state.current - alpha * direction;
    next.previous = state.current;
    next.previous_direction = std::move(direction);
    next.step = state.step + 1;
    return next;
}

/// One step of the momentum recursion. A single mini-batch draw d_t = Pi_t Delta_t
/// feeds both the alpha-term and the omega-term.
template <RateSampler S>
ProcessState momentum_step(const ProcessState& state, const S& sampler, const MomentumConfig& config,
                           RandomStream& rng) {
    ProcessState next;
    Vector direction;
    apply_minibatch(sampler, config.minibatch, state.current, direction, rng);
    next.current = state.current - config.alpha * direction;
    if (config.beta != 0.0) {
        next.current += config.beta * ((state.current - config.omega * direction) -
                                       (state.previous - config.omega * state.previous_direction));
    }
    next.previous = state.current;
    next.previous_direction = std::move(direction);
    next.step = state.step + 1;
    return next;
}

/// Per-step values of |Delta_t|^2: a single run, or the Monte Carlo mean with
/// its standard error (NaN when only one trial was run).
struct TrajectoryStats {
    std::vector<double> mean;
    std::vector<double> std_error;
    std::size_t trials = 0;
    std::uint64_t master_seed = 0;
};

/// Relative distance of v from the span of `range_basis` (orthonormal columns).
inline double range_residual(const Matrix& range_basis, const Vector& v) {
    const double nrm = v.norm();
    if (nrm == 0.0) return 0.0;
    const Vector proj = range_basis * (range_basis.transpose() * v);
    return (v - proj).norm() / nrm;
}

inline constexpr double kRangeTolerance = 1e-8;

inline void require_in_range(const Matrix& range_basis, const Vector& delta0) {
    const double res = range_residual(range_basis, delta0);
    if (res > kRangeTolerance) {
        std::ostringstream os;
        os << "initial error lies outside range(Pi_bar): relative projection residual " << res;
        throw std::invalid_argument(os.str());
    }
}

namespace detail {

template <RateSampler S>
std::vector<double> trajectory(const S& sampler, const MomentumConfig& config, const Vector& delta0,
                               int horizon, RandomStream& rng) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(horizon) + 1);
    auto state = ProcessState::start(delta0);
    out.push_back(state.current.squaredNorm());
    for (int t = 0; t < horizon; ++t) {
        state = momentum_step(state, sampler, config, rng);
        out.push_back(state.current.squaredNorm());
    }
    return out;
}

}  // namespace detail

template <RateSampler S>
TrajectoryStats run_process(const S& sampler, const MomentumConfig& config, const Vector& delta0,
                            int horizon, RandomStream& rng) {
    config.validate();
    if (horizon < 1) throw std::invalid_argument("run_process: horizon must be >= 1");
    if (delta0.size() != sampler.dimension()) throw std::invalid_argument("run_process: dimension mismatch");
    require_in_range(sym_eig(sampler.average_rate(), true).range_basis(), delta0);
    TrajectoryStats stats;
    stats.mean = detail::trajectory(sampler, config, delta0, horizon, rng);
    stats.std_error.assign(stats.mean.size(), std::numeric_limits<double>::quiet_NaN());
    stats.trials = 1;
    return stats;
}

/// Mean and standard error of |Delta_t|^2 over `trials` independent runs.
/// Trial i draws from RandomStream(master_seed, i).
template <RateSampler S>
TrajectoryStats monte_carlo_moments(const S& sampler, const MomentumConfig& config, const Vector& delta0,
                                    int horizon, std::size_t trials, std::uint64_t master_seed,
                                    unsigned threads = worker_count()) {
    config.validate();
    if (horizon < 1) throw std::invalid_argument("monte_carlo_moments: horizon must be >= 1");
    if (trials < 1) throw std::invalid_argument("monte_carlo_moments: need at least one trial");
    require_in_range(sym_eig(sampler.average_rate(), true).range_basis(), delta0);

    std::vector<std::vector<double>> runs(trials);
    parallel_for(
        trials,
        [&](std::size_t i) {
            RandomStream rng(master_seed, i);
            runs[i] = detail::trajectory(sampler, config, delta0, horizon, rng);
        },
        threads);

    const std::size_t len = static_cast<std::size_t>(horizon) + 1;
    TrajectoryStats stats;
    stats.trials = trials;
    stats.master_seed = master_seed;
    stats.mean.assign(len, 0.0);
    stats.std_error.assign(len, std::numeric_limits<double>::quiet_NaN());
    for (const auto& run : runs) {
        for (std::size_t t = 0; t < len; ++t) stats.mean[t] += run[t];
    }
    for (auto& v : stats.mean) v /= static_cast<double>(trials);
    if (trials >= 2) {
        // Shifted by the first run, so identical runs give exactly zero.
        const double n = static_cast<double>(trials);
        for (std::size_t t = 0; t < len; ++t) {
            double s = 0.0, ss = 0.0;
            for (const auto& run : runs) {
                const double d = run[t] - runs.front()[t];
                s += d;
                ss += d * d;
            }
            const double var = std::max(0.0, (ss - s * s / n) / (n - 1.0));
            stats.std_error[t] = std::sqrt(var / n);
        }
    }
    return stats;
}

/// Monte Carlo estimate of E[(Pi^[m] - Pi_bar)^2] against (1/m) Pi_bar (I - Pi_bar).
struct MinibatchVarianceReport {
    int minibatch = 1;
    std::size_t draws = 0;
    Matrix estimate;
    Matrix entry_std_error;
    Matrix bound;
    /// lambda_max(estimate - bound).
    double excess = 0.0;
    /// Spectral norm of the entrywise standard-error matrix.
    double matrix_std_error = 0.0;
    bool passes(double sigmas = 5.0) const { return excess <= sigmas * matrix_std_error; }
};

template <ExplicitRateSampler S>
MinibatchVarianceReport estimate_minibatch_variance(const S& sampler, int m, std::size_t draws,
                                                    std::uint64_t master_seed,
                                                    unsigned threads = worker_count()) {
    if (draws < 2) throw std::invalid_argument("estimate_minibatch_variance: need at least two draws");
    const Matrix& mean = sampler.average_rate();
    const Index n = mean.rows();
    // Draws are split into fixed chunks so the reduction order is independent
    // of the worker count.
    constexpr std::size_t kChunk = 1024;
    const std::size_t chunks = (draws + kChunk - 1) / kChunk;
    std::vector<Matrix> sum(chunks, Matrix::Zero(n, n));
    std::vector<Matrix> sum_sq(chunks, Matrix::Zero(n, n));
    parallel_for(
        chunks,
        [&](std::size_t c) {
            RandomStream rng(master_seed, c, static_cast<std::uint64_t>(m));
            const std::size_t end = std::min(draws, (c + 1) * kChunk);
            for (std::size_t i = c * kChunk; i < end; ++i) {
                const Matrix dev = minibatch_draw(sampler, m, rng) - mean;
                const Matrix sq = dev * dev;
                sum[c] += sq;
                sum_sq[c] += sq.cwiseProduct(sq);
            }
        },
        threads);
    Matrix total = Matrix::Zero(n, n);
    Matrix total_sq = Matrix::Zero(n, n);
    for (std::size_t c = 0; c < chunks; ++c) {
        total += sum[c];
        total_sq += sum_sq[c];
    }
    const double nd = static_cast<double>(draws);
    MinibatchVarianceReport rep;
    rep.minibatch = m;
    rep.draws = draws;
    rep.estimate = total / nd;
    const Matrix var = ((total_sq / nd) - rep.estimate.cwiseProduct(rep.estimate)).cwiseMax(0.0) * (nd / (nd - 1.0));
    rep.entry_std_error = (var / nd).cwiseSqrt();
    rep.bound = mean * (Matrix::Identity(n, n) - mean) / static_cast<double>(m);
    rep.excess = sym_eig(0.5 * ((rep.estimate - rep.bound) + (rep.estimate - rep.bound).transpose()))
                     .eigenvalues(0);
    rep.matrix_std_error = spectral_norm(rep.entry_std_error);
    return rep;
}

}  // namespace momentum_lab
