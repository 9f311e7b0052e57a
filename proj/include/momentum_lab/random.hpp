#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace momentum_lab {

/// Deterministic random stream keyed by (master seed, stream index, lane).
///
/// Each trial or chain owns its own stream, so results never depend on the
/// order in which trials are scheduled. Uniform variates are built from raw
/// 64-bit draws so they do not depend on the standard library's distribution
/// implementations.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t master_seed, std::uint64_t stream = 0,
                          std::uint64_t lane = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                          static_cast<std::uint32_t>(master_seed >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(lane),
                          static_cast<std::uint32_t>(lane >> 32),
                          0x6d6f6d65u};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        // Lemire-style rejection keeps the draw unbiased.
        const std::uint64_t bound = n;
        const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    double normal() { return normal_(engine_); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// k distinct indices from [0, n), via partial Fisher-Yates. Indices are
/// returned sorted. The swaps are undone afterwards, so `scratch` is the
/// identity permutation between calls and the result depends only on `rng`.
inline std::vector<std::size_t> sample_subset(std::size_t n, std::size_t k, RandomStream& rng,
                                              std::vector<std::size_t>& scratch) {
    if (scratch.size() != n) {
        scratch.resize(n);
        std::iota(scratch.begin(), scratch.end(), std::size_t{0});
    }
    std::vector<std::size_t> picks(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(n - i);
        picks[i] = j;
        std::swap(scratch[i], scratch[j]);
    }
    std::vector<std::size_t> out(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = k; i-- > 0;) std::swap(scratch[i], scratch[picks[i]]);
    std::sort(out.begin(), out.end());
    return out;
}

/// Cumulative-sum inversion on a single uniform variate.
inline std::size_t sample_weighted(std::span<const double> cumulative, RandomStream& rng) {
    const double u = rng.uniform() * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

inline std::vector<double> cumulative_weights(std::span<const double> weights) {
    std::vector<double> c(weights.size());
    std::partial_sum(weights.begin(), weights.end(), c.begin());
    return c;
}

/// Worker count: MOMENTUM_LAB_THREADS when set, otherwise all cores.
inline unsigned worker_count() {
    if (const char* env = std::getenv("MOMENTUM_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work is
/// handed out by index; callers write results into per-index slots and
/// reduce them in index order afterwards.
template <class Body>
void parallel_for(std::size_t count, Body&& body, unsigned threads = worker_count()) {
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::size_t next = 0;
    std::mutex mu;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= count || failure) return;
                i = next++;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace momentum_lab
