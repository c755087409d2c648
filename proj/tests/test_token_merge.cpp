// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "support/oracles.hpp"
#include "tomeforge/token_merge.hpp"

using namespace tomeforge;

namespace {

TokenState flat_state(const Tensor& tokens, std::vector<float> sizes = {}) {
    TokenState s;
    const int n = static_cast<int>(tokens.dim(0));
    s.tokens = tokens;
    s.sizes = sizes.empty() ? std::vector<float>(static_cast<size_t>(n), 1.0f) : std::move(sizes);
    s.members.resize(static_cast<size_t>(n));
    s.loc_ids.resize(static_cast<size_t>(n));
    int32_t next_patch = 0;
    for (int i = 0; i < n; ++i) {
        s.loc_ids[static_cast<size_t>(i)] = static_cast<float>(i);
        const int count = static_cast<int>(s.sizes[static_cast<size_t>(i)]);
        for (int k = 0; k < count; ++k) s.members[static_cast<size_t>(i)].push_back(next_patch++);
    }
    s.class_index = -1;
    return s;
}

bool edges_equal(const MatchResult& a, const MatchResult& b) {
    if (a.r_effective != b.r_effective || a.edges.size() != b.edges.size()) return false;
    for (size_t i = 0; i < a.edges.size(); ++i) {
        if (a.edges[i].src != b.edges[i].src || a.edges[i].dst != b.edges[i].dst) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("extract_metric: single head K is the raw K matrix") {
    MetricBundle bundle;
    bundle.layer = 0;
    bundle.x_pre = oracles::random_matrix(4, 6, 1);
    bundle.x_attn = oracles::random_matrix(4, 6, 2);
    bundle.k = Tensor({1, 4, 6});
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) bundle.k(0, i, j) = bundle.x_attn(i, j) + 1.0f;
    }
    bundle.q = bundle.k;
    bundle.v = bundle.k;
    const Tensor m = extract_metric(bundle, SimilarityMetric::K, RngStream(0));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) CHECK(m(i, j) == bundle.k(0, i, j));
    }
}

TEST_CASE("extract_metric: Xpre is the untouched block input") {
    MetricBundle bundle;
    bundle.layer = 2;
    bundle.x_pre = oracles::random_matrix(5, 8, 3);
    bundle.x_attn = oracles::random_matrix(5, 8, 4);
    bundle.k = Tensor({2, 5, 4});
    bundle.q = bundle.k;
    bundle.v = bundle.k;
    const Tensor m = extract_metric(bundle, SimilarityMetric::Xpre, RngStream(0));
    CHECK(m.storage() == bundle.x_pre.storage());
}

TEST_CASE("extract_metric: Random is deterministic per layer") {
    MetricBundle bundle;
    bundle.layer = 5;
    bundle.x_pre = oracles::random_matrix(6, 8, 5);
    bundle.x_attn = bundle.x_pre;
    bundle.k = Tensor({2, 6, 4});
    bundle.q = bundle.k;
    bundle.v = bundle.k;
    const Tensor a = extract_metric(bundle, SimilarityMetric::Random, RngStream(3));
    const Tensor b = extract_metric(bundle, SimilarityMetric::Random, RngStream(3));
    CHECK(a.storage() == b.storage());
    bundle.layer = 6;
    const Tensor c = extract_metric(bundle, SimilarityMetric::Random, RngStream(3));
    CHECK(a.storage() != c.storage());
}

TEST_CASE("extract_metric: multi-head average") {
    MetricBundle bundle;
    bundle.layer = 0;
    bundle.x_pre = oracles::random_matrix(3, 8, 6);
    bundle.x_attn = bundle.x_pre;
    bundle.k = Tensor({2, 3, 4});
    for (int h = 0; h < 2; ++h) {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 4; ++j) bundle.k(h, i, j) = static_cast<float>(h + 1);
        }
    }
    bundle.q = bundle.k;
    bundle.v = bundle.k;
    const Tensor m = extract_metric(bundle, SimilarityMetric::K, RngStream(0));
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(m(i) == 1.5f);
}

TEST_CASE("bipartite_soft_match: r=0 keeps nothing") {
    const Tensor metric = oracles::random_matrix(8, 4, 7);
    const MatchResult match = bipartite_soft_match(metric, 0, {});
    CHECK(match.edges.empty());
    CHECK(match.r_effective == 0);
}

TEST_CASE("bipartite_soft_match: two identical vectors give one edge of score 1") {
    Tensor metric({2, 3}, {1, 2, 3, 1, 2, 3});
    const MatchResult match = bipartite_soft_match(metric, 1, {});
    REQUIRE(match.edges.size() == 1);
    CHECK(match.edges[0].src == 0);
    CHECK(match.edges[0].dst == 1);
    CHECK(match.edges[0].score == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("bipartite_soft_match: N=8 seeded equals the exhaustive oracle") {
    const Tensor metric = oracles::random_matrix(8, 5, 81);
    const MatchResult fast = bipartite_soft_match(metric, 3, {});
    const MatchResult ref = oracles::match_exhaustive(metric, 3, {});
    CHECK(edges_equal(fast, ref));
}

TEST_CASE("bipartite_soft_match: oracle equivalence over seeded instances with exclusions") {
    RngStream rng(4242);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 31);
        const int c = 2 + static_cast<int>(rng.next_u64() % 9);
        const int r = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(n));
        std::set<int> excluded;
        if (rng.next_unit() < 0.5f) excluded.insert(0);
        if (rng.next_unit() < 0.25f) excluded.insert(static_cast<int>(rng.next_u64() % n));
        const Tensor metric = oracles::random_matrix(n, c, rng.next_u64());
        const MatchResult fast = bipartite_soft_match(metric, r, excluded);
        const MatchResult ref = oracles::match_exhaustive(metric, r, excluded);
        REQUIRE(edges_equal(fast, ref));
        for (const MatchEdge& e : fast.edges) {
            CHECK(!excluded.count(e.src));
            CHECK(!excluded.count(e.dst));
        }
    }
}

TEST_CASE("bipartite_soft_match: r beyond |A| clamps") {
    const Tensor metric = oracles::random_matrix(6, 4, 17);
    const MatchResult match = bipartite_soft_match(metric, 50, {});
    CHECK(match.r_effective == 3);  // A = {0, 2, 4}
}

TEST_CASE("apply_merge: equal sizes average, sizes add, members union") {
    Tensor tokens({2, 2}, {2.0f, 4.0f, 6.0f, 8.0f});
    TokenState state = flat_state(tokens);
    MatchResult match;
    match.set_assignment = {0, 1};
    match.edges = {{0, 1, 1.0f}};
    match.r_effective = 1;
    const TokenState merged = apply_merge(state, match);
    REQUIRE(merged.count() == 1);
    CHECK(merged.tokens(0, 0) == 4.0f);
    CHECK(merged.tokens(0, 1) == 6.0f);
    CHECK(merged.sizes[0] == 2.0f);
    CHECK(merged.members[0] == std::vector<int32_t>{0, 1});
    CHECK(merged.loc_ids[0] == 0.5f);
}

TEST_CASE("apply_merge: size-weighted mean (3u + v) / 4") {
    Tensor tokens({2, 1}, {10.0f, 2.0f});
    TokenState state = flat_state(tokens, {3.0f, 1.0f});
    MatchResult match;
    match.set_assignment = {0, 1};
    match.edges = {{0, 1, 1.0f}};
    match.r_effective = 1;
    const TokenState merged = apply_merge(state, match);
    REQUIRE(merged.count() == 1);
    CHECK(merged.tokens(0, 0) == 8.0f);  // (1*2 + 3*10) / 4
    CHECK(merged.sizes[0] == 4.0f);
}

TEST_CASE("apply_merge: sequential merges equal one-shot weighted mean over final members") {
    const Tensor tokens = oracles::random_matrix(6, 4, 55);
    TokenState state = flat_state(tokens);

    MatchResult first;
    first.set_assignment = {0, 1, 0, 1, 0, 1};
    first.edges = {{0, 1, 1.0f}, {2, 3, 0.9f}};
    first.r_effective = 2;
    TokenState mid = apply_merge(state, first);
    // mid order: unmerged A {4}, then B {1<-0, 3<-2, 5}
    MatchResult second;
    second.set_assignment = {0, 1, 0, 1};
    second.edges = {{0, 1, 1.0f}};  // token 4 into group {0,1}
    second.r_effective = 1;
    const TokenState final_state = apply_merge(mid, second);

    REQUIRE(final_state.count() == 3);
    for (int i = 0; i < final_state.count(); ++i) {
        const auto& members = final_state.members[static_cast<size_t>(i)];
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int32_t m : members) acc += tokens(m, j);
            acc /= static_cast<double>(members.size());
            CHECK(std::abs(final_state.tokens(i, j) - acc) < 1e-6);
        }
    }
    final_state.check_invariants(6);
}

TEST_CASE("apply_merge: reduction count and conservation under fuzz") {
    RngStream rng(777);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = trial % 10 == 0 ? 128 + static_cast<int>(rng.next_u64() % 129)  // up to 256
                                      : 4 + static_cast<int>(rng.next_u64() % 60);
        const int r = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(n / 2 + 1));
        const Tensor metric = oracles::random_matrix(n, 6, rng.next_u64());
        TokenState state = flat_state(oracles::random_matrix(n, 6, rng.next_u64()));
        const MatchResult match = bipartite_soft_match(metric, r, {});
        const TokenState merged = apply_merge(state, match);
        CHECK(merged.count() == n - match.r_effective);
        merged.check_invariants(n);
    }
}

TEST_CASE("apply_merge: stale match is rejected") {
    TokenState state = flat_state(oracles::random_matrix(3, 2, 5));
    MatchResult match;
    match.set_assignment = {0, 1, 0};
    match.edges = {{7, 1, 1.0f}};
    match.r_effective = 1;
    CHECK_THROWS_AS(apply_merge(state, match), std::invalid_argument);
}

TEST_CASE("apply_merge: B-internal relabeling keeps the same membership groups") {
    const int n = 10;
    const Tensor metric = oracles::random_matrix(n, 4, 31);
    TokenState state = flat_state(oracles::random_matrix(n, 4, 32));
    const MatchResult match = bipartite_soft_match(metric, 3, {});
    const TokenState merged = apply_merge(state, match);

    // Relabel B internally: swap the last two B positions (indices 7 and 9)
    // in tokens/metric; groups must be the same as sets of source members.
    auto swap_rows = [](Tensor& t, int a, int b) {
        for (int64_t j = 0; j < t.dim(1); ++j) std::swap(t(a, j), t(b, j));
    };
    Tensor metric2 = metric;
    Tensor tokens2 = state.tokens;
    swap_rows(metric2, 7, 9);
    swap_rows(tokens2, 7, 9);
    TokenState state2 = flat_state(tokens2);
    // keep member identity aligned with the original patch ids
    std::swap(state2.members[7], state2.members[9]);
    std::swap(state2.loc_ids[7], state2.loc_ids[9]);
    const MatchResult match2 = bipartite_soft_match(metric2, 3, {});
    const TokenState merged2 = apply_merge(state2, match2);

    std::set<std::vector<int32_t>> groups1, groups2;
    for (const auto& m : merged.members) groups1.insert(m);
    for (const auto& m : merged2.members) groups2.insert(m);
    CHECK(groups1 == groups2);
}

TEST_CASE("merged_pair_similarity: identical tokens score 1, r=0 absent") {
    Tensor metric({4, 3});
    for (int i = 0; i < 4; ++i) {
        metric(i, 0) = 1.0f;
        metric(i, 1) = 2.0f;
        metric(i, 2) = 2.0f;
    }
    const MatchResult match = bipartite_soft_match(metric, 2, {});
    CHECK(*merged_pair_similarity(match) == doctest::Approx(1.0).epsilon(1e-6));
    const MatchResult none = bipartite_soft_match(metric, 0, {});
    CHECK(!merged_pair_similarity(none).has_value());
}

TEST_CASE("merged_pair_similarity: top-r mean is non-increasing in r") {
    const Tensor metric = oracles::random_matrix(24, 6, 66);
    const MatchResult r10 = bipartite_soft_match(metric, 10, {});
    const MatchResult r5 = bipartite_soft_match(metric, 5, {});
    CHECK(*merged_pair_similarity(r10) <= *merged_pair_similarity(r5));
}

TEST_CASE("merged_pair_similarity: equals the oracle mean of the best edges") {
    const Tensor metric = oracles::random_matrix(12, 5, 90);
    const MatchResult match = bipartite_soft_match(metric, 4, {});
    const MatchResult ref = oracles::match_exhaustive(metric, 4, {});
    double ref_mean = 0.0;
    for (const MatchEdge& e : ref.edges) ref_mean += e.score;
    ref_mean /= static_cast<double>(ref.edges.size());
    CHECK(*merged_pair_similarity(match) == doctest::Approx(ref_mean).epsilon(1e-6));
}

TEST_CASE("drop_by_norm: r=0 is identity; lowest norm goes first") {
    Tensor tokens({3, 1}, {3.0f, 1.0f, 2.0f});
    TokenState state = flat_state(tokens);
    const DropResult keep = drop_by_norm(state, state.tokens, 0, {});
    CHECK(keep.state.count() == 3);
    CHECK(keep.dropped == 0);

    const DropResult one = drop_by_norm(state, state.tokens, 1, {});
    REQUIRE(one.state.count() == 2);
    CHECK(one.state.tokens(0, 0) == 3.0f);
    CHECK(one.state.tokens(1, 0) == 2.0f);
}

TEST_CASE("drop_by_norm: survivor set equals the sorting oracle") {
    const Tensor features = oracles::random_matrix(10, 4, 14);
    TokenState state = flat_state(oracles::random_matrix(10, 4, 15));
    const DropResult result = drop_by_norm(state, features, 4, {});

    std::vector<std::pair<float, int>> norms;
    for (int i = 0; i < 10; ++i) {
        float sq = 0.0f;
        for (int j = 0; j < 4; ++j) sq += features(i, j) * features(i, j);
        norms.emplace_back(std::sqrt(sq), i);
    }
    std::sort(norms.begin(), norms.end());
    std::set<int> expected_survivors;
    for (size_t i = 4; i < norms.size(); ++i) expected_survivors.insert(norms[i].second);

    std::set<int> got;
    for (const auto& members : result.state.members) got.insert(members.front());
    CHECK(got == expected_survivors);
}

TEST_CASE("drop_by_norm: protected tokens survive and r clamps") {
    TokenState state = flat_state(oracles::random_matrix(5, 3, 25));
    state.class_index = 0;
    const DropResult result = drop_by_norm(state, state.tokens, 10, {0});
    CHECK(result.dropped == 4);
    CHECK(result.state.count() == 1);
    CHECK(result.state.class_index == 0);
}
