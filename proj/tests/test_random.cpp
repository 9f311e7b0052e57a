#include "momentum_lab/random.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

using namespace momentum_lab;

TEST(RandomStream, SameKeySameSequence) {
    RandomStream a(42, 3, 1), b(42, 3, 1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RandomStream, DistinctKeysDiverge) {
    RandomStream a(42, 0, 0), b(42, 1, 0), c(42, 0, 1), d(43, 0, 0);
    const auto x = a.next_u64();
    EXPECT_NE(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
    EXPECT_NE(x, d.next_u64());
}

TEST(RandomStream, UniformInUnitInterval) {
    RandomStream r(1);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(RandomStream, BelowIsRoughlyUniform) {
    RandomStream r(2);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(SampleSubset, DistinctSortedAndCoversAll) {
    RandomStream r(3);
    std::vector<std::size_t> scratch;
    std::vector<int> hits(20, 0);
    for (int i = 0; i < 4000; ++i) {
        const auto s = sample_subset(20, 5, r, scratch);
        ASSERT_EQ(s.size(), 5u);
        EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
        EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 5u);
        for (auto j : s) ++hits[j];
    }
    // Each index appears with probability 1/4.
    for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(SampleWeighted, FollowsWeights) {
    const std::vector<double> w{1.0, 3.0, 0.0, 6.0};
    const auto c = cumulative_weights(w);
    RandomStream r(4);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 100000; ++i) ++counts[sample_weighted(c, r)];
    EXPECT_NEAR(counts[0], 10000, 600);
    EXPECT_NEAR(counts[1], 30000, 900);
    EXPECT_EQ(counts[2], 0);
    EXPECT_NEAR(counts[3], 60000, 900);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> seen(1000);
    parallel_for(1000, [&](std::size_t i) { seen[i]++; }, 4);
    for (auto& s : seen) EXPECT_EQ(s.load(), 1);
}

TEST(ParallelFor, PropagatesExceptions) {
    EXPECT_THROW(parallel_for(
                     100, [](std::size_t i) {
                         if (i == 37) throw std::runtime_error("boom");
                     },
                     3),
                 std::runtime_error);
}
