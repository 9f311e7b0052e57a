#pragma once

// Run-time bracketing of the Nesterov momentum parameter with two solver chains
// compared on a fixed set of probe rows.

#include "momentum_lab/solvers.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace momentum_lab {

struct AdaptiveConfig {
    int minibatch = 2;
    long max_iters = 100000;
    long warmup = 50;
    long check_interval = 10;
    std::size_t probe_rows = 100;
    int patience = 20;
    double ratio_high = 3.0;
    double ratio_low = 0.5;
    /// Stop as soon as the plus chain meets the tolerance during warm-up or
    /// adaptation. Off by default: the bracket search then always runs to close or T.
    bool stop_during_adaptation = false;

    void validate() const {
        if (minibatch < 1) throw std::invalid_argument("AdaptiveConfig: minibatch must be >= 1");
        if (!(warmup >= 0 && warmup < max_iters)) throw std::invalid_argument("AdaptiveConfig: need 0 <= warmup < max_iters");
        if (check_interval < 1) throw std::invalid_argument("AdaptiveConfig: check_interval must be >= 1");
        if (probe_rows < 1) throw std::invalid_argument("AdaptiveConfig: probe_rows must be >= 1");
        if (patience < 0) throw std::invalid_argument("AdaptiveConfig: patience must be >= 0");
        if (!(ratio_high > 1.0 && ratio_low > 0.0 && ratio_low < 1.0))
            throw std::invalid_argument("AdaptiveConfig: need ratio_high > 1 > ratio_low > 0");
    }
};

enum class BracketAction { none, aggressive, conservative };

inline const char* to_string(BracketAction a) {
    switch (a) {
        case BracketAction::aggressive: return "aggressive";
        case BracketAction::conservative: return "conservative";
        default: return "none";
    }
}

/// The (phi_-, phi_+) bracket with its patience counter. beta = 1 - 1/phi.
class MomentumBracket {
public:
    MomentumBracket(double phi_minus, double phi_plus, int patience, double high, double low)
        : phi_minus_(phi_minus), phi_plus_(phi_plus), patience_limit_(patience), high_(high), low_(low) {}

    double phi_plus() const { return phi_plus_; }
    double phi_minus() const { return phi_minus_; }
    double beta_plus() const { return 1.0 - 1.0 / phi_plus_; }
    double beta_minus() const { return 1.0 - 1.0 / phi_minus_; }
    /// (1 - beta_-) / (1 - beta_+).
    double width() const { return phi_plus_ / phi_minus_; }
    bool closed() const { return width() <= 2.0; }
    int counter() const { return counter_; }

    /// Feeds one residual ratio R = r_+ / r_-.
    BracketAction observe(double ratio) {
        if (ratio < 1.0) ++counter_; else counter_ = 0;
        if (ratio >= high_) {
            phi_plus_ *= 0.5;
            counter_ = 0;
            return BracketAction::aggressive;
        }
        if (ratio <= low_ || counter_ > patience_limit_) {
            phi_minus_ *= 2.0;
            counter_ = 0;
            return BracketAction::conservative;
        }
        return BracketAction::none;
    }

private:
    double phi_minus_;
    double phi_plus_;
    int counter_ = 0;
    int patience_limit_;
    double high_;
    double low_;
};

/// Fixed probe rows (K~, b~) for cheap residual estimates.
struct ProbeRows {
    Matrix matrix;
    Vector rhs;
    std::vector<std::size_t> rows;
    /// b~ was zero, so probe_residual reports the absolute residual.
    bool absolute = false;

    static ProbeRows sample(const LinearProblem& problem, std::size_t count, RandomStream& rng) {
        const auto n = static_cast<std::size_t>(problem.matrix.rows());
        ProbeRows p;
        std::vector<std::size_t> scratch;
        p.rows = sample_subset(n, std::min(count, n), rng, scratch);
        p.matrix = detail::gather_rows(problem.matrix, p.rows);
        p.rhs = detail::gather(problem.rhs, p.rows);
        p.absolute = !(p.rhs.norm() > 0.0);
        return p;
    }
};

/// |K~ x - b~| / |b~|.
inline double probe_residual(const Matrix& k_probe, const Vector& b_probe, const Vector& x) {
    const double nb = b_probe.norm();
    if (!(nb > 0.0)) throw std::invalid_argument("probe_residual: probe right-hand side is zero");
    return (k_probe * x - b_probe).norm() / nb;
}

inline double probe_residual(const ProbeRows& p, const Vector& x) {
    if (p.absolute) return (p.matrix * x - p.rhs).norm();
    return probe_residual(p.matrix, p.rhs, x);
}

struct AdaptiveEvent {
    long iteration = 0;
    double beta_plus = 0.0;
    double beta_minus = 0.0;
    double ratio = 0.0;
    BracketAction action = BracketAction::none;
};

struct AdaptiveRunResult {
    Vector solution;
    double selected_beta = 0.0;
    bool bracket_closed = false;
    /// Iteration at which (1 - beta_-)/(1 - beta_+) <= 2 first held; -1 if never.
    long close_iteration = -1;
    SolverRunResult tail;
    std::vector<AdaptiveEvent> trace;

    long iterations = 0;
    /// Rows touched by all chains, both chains counted during adaptation.
    long rows_sampled = 0;
    double final_residual = 0.0;
    bool converged = false;
    /// stop_during_adaptation fired: tolerance met before the tail phase.
    bool converged_during_adaptation = false;
    /// T ran out before the bracket closed; beta_+ was used as is.
    bool exhausted_before_close = false;
    /// The minus chain hit a zero probe residual; beta_- was selected.
    bool minus_chain_solved = false;
    /// m < 2: plain mini-batch CD without momentum.
    bool plain_fallback = false;
    bool absolute_probe = false;
    double wall_ms = 0.0;
};

namespace detail {

/// Stream for the minus chain and the probe rows: keyed off the caller's stream
/// without advancing it, so the plus chain sees exactly the caller's draws.
inline RandomStream side_stream(const RandomStream& rng, std::uint64_t lane) {
    RandomStream copy = rng;
    return RandomStream(copy.next_u64(), 0x61646170, lane);
}

}  // namespace detail

inline AdaptiveRunResult adaptive_solve(const LinearProblem& problem, const BlockScheme& scheme,
                                        const AdaptiveConfig& config, double tolerance, RandomStream& rng) {
    config.validate();
    if (!(tolerance > 0.0)) throw std::invalid_argument("adaptive_solve: tolerance must be positive");
    const auto start = std::chrono::steady_clock::now();
    const BlockSampler sampler(problem, scheme);
    const long m = config.minibatch;
    const long per_step = m * static_cast<long>(sampler.block_size());
    AdaptiveRunResult out;
    auto finish = [&](const MomentumChain& chain) {
        out.solution = chain.iterate();
        out.final_residual = chain.relative_residual();
        out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return out;
    };

    if (m < 2) {
        MomentumChain chain(problem, sampler, Vector::Zero(problem.unknowns()));
        out.plain_fallback = true;
        out.tail = run_chain(chain, problem, sampler, MomentumConfig::nesterov(0.0, 1), tolerance, config.max_iters, rng);
        out.iterations = out.tail.iterations;
        out.rows_sampled = out.tail.rows_sampled;
        out.converged = out.tail.converged;
        return finish(chain);
    }

    RandomStream probe_rng = detail::side_stream(rng, 2);
    RandomStream minus_rng = detail::side_stream(rng, 1);
    const ProbeRows probe = ProbeRows::sample(problem, config.probe_rows, probe_rng);
    out.absolute_probe = probe.absolute;

    MomentumBracket bracket(2.0, static_cast<double>(m), config.patience, config.ratio_high, config.ratio_low);
    MomentumChain plus(problem, sampler, Vector::Zero(problem.unknowns()));
    long t = 0;

    // Warm-up at beta = 1 - 1/m.
    const MomentumConfig warm = MomentumConfig::nesterov(bracket.beta_plus(), config.minibatch);
    for (; t < config.warmup; ++t) {
        plus.step(warm, rng);
        out.rows_sampled += per_step;
        if (config.stop_during_adaptation && plus.relative_residual() <= tolerance) {
            out.iterations = t + 1;
            out.converged = out.converged_during_adaptation = true;
            out.selected_beta = bracket.beta_plus();
            return finish(plus);
        }
    }

    MomentumChain minus = plus;
    while (t < config.max_iters && !bracket.closed()) {
        plus.step(MomentumConfig::nesterov(bracket.beta_plus(), config.minibatch), rng);
        minus.step(MomentumConfig::nesterov(bracket.beta_minus(), config.minibatch), minus_rng);
        out.rows_sampled += 2 * per_step;
        if (t % config.check_interval == 0) {
            const double r_plus = probe_residual(probe, plus.lookahead());
            const double r_minus = probe_residual(probe, minus.lookahead());
            if (!(r_minus > 0.0)) {
                out.minus_chain_solved = true;
                out.trace.push_back({t, bracket.beta_plus(), bracket.beta_minus(), std::numeric_limits<double>::infinity(), BracketAction::none});
                ++t;
                plus.copy_state_from(minus);
                out.selected_beta = bracket.beta_minus();
                break;
            }
            const double ratio = r_plus / r_minus;
            const BracketAction action = bracket.observe(ratio);
            if (action == BracketAction::aggressive) plus.copy_state_from(minus);
            else if (action == BracketAction::conservative) minus.copy_state_from(plus);
            out.trace.push_back({t, bracket.beta_plus(), bracket.beta_minus(), ratio, action});
        }
        ++t;
        if (config.stop_during_adaptation && plus.relative_residual() <= tolerance) {
            out.iterations = t;
            out.converged = out.converged_during_adaptation = true;
            out.selected_beta = bracket.beta_plus();
            if (bracket.closed()) {
                out.bracket_closed = true;
                out.close_iteration = t;
            }
            return finish(plus);
        }
    }

    if (!out.minus_chain_solved) out.selected_beta = bracket.beta_plus();
    if (bracket.closed()) {
        out.bracket_closed = true;
        out.close_iteration = t;
    } else if (!out.minus_chain_solved) {
        out.exhausted_before_close = true;
    }

    out.tail = run_chain(plus, problem, sampler, MomentumConfig::nesterov(out.selected_beta, config.minibatch), tolerance,
                         config.max_iters - t, rng);
    out.iterations = t + out.tail.iterations;
    out.rows_sampled += out.tail.rows_sampled;
    out.converged = out.tail.converged;
    return finish(plus);
}

}  // namespace momentum_lab
