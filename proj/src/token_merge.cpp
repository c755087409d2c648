// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/token_merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tomeforge {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();
constexpr float kNormFloor = 1e-12f;  // zero-vector guard before normalization

std::vector<float> unit_rows(const Tensor& m) {
    const int64_t n = m.dim(0), c = m.dim(1);
    std::vector<float> u(static_cast<size_t>(n * c));
    for (int64_t i = 0; i < n; ++i) {
        const float* row = m.row(i);
        float sq = 0.0f;
        for (int64_t j = 0; j < c; ++j) sq += row[j] * row[j];
        const float norm = std::max(std::sqrt(sq), kNormFloor);
        float* out = u.data() + i * c;
        for (int64_t j = 0; j < c; ++j) out[j] = row[j] / norm;
    }
    return u;
}

}  // namespace

const char* metric_name(SimilarityMetric m) {
    switch (m) {
        case SimilarityMetric::Random: return "random";
        case SimilarityMetric::Xpre: return "xpre";
        case SimilarityMetric::Xattn: return "xattn";
        case SimilarityMetric::K: return "k";
        case SimilarityMetric::Q: return "q";
        case SimilarityMetric::V: return "v";
    }
    return "?";
}

SimilarityMetric metric_from_name(std::string_view name) {
    if (name == "random") return SimilarityMetric::Random;
    if (name == "xpre") return SimilarityMetric::Xpre;
    if (name == "xattn") return SimilarityMetric::Xattn;
    if (name == "k") return SimilarityMetric::K;
    if (name == "q") return SimilarityMetric::Q;
    if (name == "v") return SimilarityMetric::V;
    throw std::invalid_argument("unknown similarity metric: " + std::string(name));
}

Tensor extract_metric(const MetricBundle& bundle, SimilarityMetric choice, const RngStream& rng) {
    switch (choice) {
        case SimilarityMetric::Xpre: return bundle.x_pre;
        case SimilarityMetric::Xattn: return bundle.x_attn;
        case SimilarityMetric::Random: {
            const int64_t n = bundle.x_pre.dim(0);
            const int64_t d = bundle.k.dim(2);
            RngStream layer_rng = rng.split(static_cast<uint64_t>(bundle.layer));
            Tensor m({n, d});
            for (int64_t i = 0; i < n * d; ++i) m(i) = layer_rng.next_gaussian();
            return m;
        }
        case SimilarityMetric::K:
        case SimilarityMetric::Q:
        case SimilarityMetric::V: {
            const Tensor& src = choice == SimilarityMetric::K   ? bundle.k
                                : choice == SimilarityMetric::Q ? bundle.q
                                                                : bundle.v;
            const int64_t heads = src.dim(0), n = src.dim(1), d = src.dim(2);
            Tensor m({n, d});
            const float inv = 1.0f / static_cast<float>(heads);
            for (int64_t i = 0; i < n; ++i) {
                float* out = m.row(i);
                for (int64_t h = 0; h < heads; ++h) {
                    for (int64_t j = 0; j < d; ++j) out[j] += src(h, i, j);
                }
                for (int64_t j = 0; j < d; ++j) out[j] *= inv;
            }
            return m;
        }
    }
    throw std::invalid_argument("extract_metric: bad choice");
}

MatchResult bipartite_soft_match(const Tensor& metric, int r, const std::set<int>& excluded) {
    if (metric.rank() != 2) {
        throw std::invalid_argument("bipartite_soft_match: metric must be [N,C'], got " +
                                    shape_str(metric.shape()));
    }
    if (r < 0) throw std::invalid_argument("bipartite_soft_match: r must be >= 0");
    const int n = static_cast<int>(metric.dim(0));
    const int c = static_cast<int>(metric.dim(1));

    MatchResult result;
    result.set_assignment.resize(static_cast<size_t>(n));
    std::vector<int> a_tokens, b_tokens;
    for (int i = 0; i < n; ++i) {
        const bool in_b = (i % 2 == 1) || excluded.count(i) != 0;
        result.set_assignment[static_cast<size_t>(i)] = in_b ? 1 : 0;
        (in_b ? b_tokens : a_tokens).push_back(i);
    }
    if (r == 0 || a_tokens.empty() || b_tokens.empty()) return result;

    const std::vector<float> unit = unit_rows(metric);

    std::vector<MatchEdge> candidates;
    candidates.reserve(a_tokens.size());
    for (int a : a_tokens) {
        const float* ua = unit.data() + static_cast<int64_t>(a) * c;
        float best = kNegInf;
        int best_b = -1;
        for (int b : b_tokens) {
            if (excluded.count(b)) continue;  // -inf target, never wins
            const float* ub = unit.data() + static_cast<int64_t>(b) * c;
            float dot = 0.0f;
            for (int j = 0; j < c; ++j) dot += ua[j] * ub[j];
            if (dot > best) {  // strict: ties keep the lower B index
                best = dot;
                best_b = b;
            }
        }
        if (best_b >= 0) candidates.push_back({a, best_b, best});
    }

    std::sort(candidates.begin(), candidates.end(), [](const MatchEdge& x, const MatchEdge& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.src < y.src;
    });
    const int keep = std::min<int>(r, static_cast<int>(candidates.size()));
    result.edges.assign(candidates.begin(), candidates.begin() + keep);
    result.r_effective = keep;
    return result;
}

MergedArrays merge_token_arrays(const Tensor& tokens, const std::vector<float>& sizes,
                                const std::vector<float>& loc_ids,
                                const std::vector<std::vector<int32_t>>& members,
                                const MatchResult& match) {
    const int n = static_cast<int>(tokens.dim(0));
    const int c = static_cast<int>(tokens.dim(1));
    if (static_cast<int>(match.set_assignment.size()) != n) {
        throw std::invalid_argument("apply_merge: match was produced for " +
                                    std::to_string(match.set_assignment.size()) + " tokens, state has " +
                                    std::to_string(n));
    }

    std::vector<std::vector<int>> sources(static_cast<size_t>(n));
    std::vector<uint8_t> merged_away(static_cast<size_t>(n), 0);
    for (const MatchEdge& e : match.edges) {
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
            throw std::invalid_argument("apply_merge: stale match, edge " + std::to_string(e.src) + "->" +
                                        std::to_string(e.dst) + " out of range for " + std::to_string(n) +
                                        " tokens");
        }
        sources[static_cast<size_t>(e.dst)].push_back(e.src);
        merged_away[static_cast<size_t>(e.src)] = 1;
    }

    // Survivors: unmerged A in original order, then all of B in original order.
    std::vector<int> survivors;
    survivors.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (match.set_assignment[static_cast<size_t>(i)] == 0 && !merged_away[static_cast<size_t>(i)]) {
            survivors.push_back(i);
        }
    }
    for (int i = 0; i < n; ++i) {
        if (match.set_assignment[static_cast<size_t>(i)] == 1) survivors.push_back(i);
    }

    MergedArrays out;
    const int m = static_cast<int>(survivors.size());
    out.tokens = Tensor({m, c});
    out.sizes.resize(static_cast<size_t>(m));
    out.loc_ids.resize(static_cast<size_t>(m));
    out.members.resize(static_cast<size_t>(m));
    out.new_to_old = survivors;

    for (int ni = 0; ni < m; ++ni) {
        const int old = survivors[static_cast<size_t>(ni)];
        auto& srcs = sources[static_cast<size_t>(old)];
        float* dst_row = out.tokens.row(ni);
        if (srcs.empty()) {
            const float* src_row = tokens.row(old);
            std::copy(src_row, src_row + c, dst_row);
            out.sizes[static_cast<size_t>(ni)] = sizes[static_cast<size_t>(old)];
            out.loc_ids[static_cast<size_t>(ni)] = loc_ids[static_cast<size_t>(old)];
            out.members[static_cast<size_t>(ni)] = members[static_cast<size_t>(old)];
            continue;
        }
        std::sort(srcs.begin(), srcs.end());
        // Weighted mean, destination first then sources ascending.
        float size_sum = sizes[static_cast<size_t>(old)];
        double loc_acc = static_cast<double>(loc_ids[static_cast<size_t>(old)]) * sizes[static_cast<size_t>(old)];
        const float* drow = tokens.row(old);
        for (int j = 0; j < c; ++j) dst_row[j] = drow[j] * sizes[static_cast<size_t>(old)];
        std::vector<int32_t> group_members = members[static_cast<size_t>(old)];
        for (int s : srcs) {
            const float w = sizes[static_cast<size_t>(s)];
            const float* srow = tokens.row(s);
            for (int j = 0; j < c; ++j) dst_row[j] += srow[j] * w;
            loc_acc += static_cast<double>(loc_ids[static_cast<size_t>(s)]) * w;
            size_sum += w;
            group_members.insert(group_members.end(), members[static_cast<size_t>(s)].begin(),
                                 members[static_cast<size_t>(s)].end());
        }
        const float inv = 1.0f / size_sum;
        for (int j = 0; j < c; ++j) dst_row[j] *= inv;
        std::sort(group_members.begin(), group_members.end());
        out.sizes[static_cast<size_t>(ni)] = size_sum;
        out.loc_ids[static_cast<size_t>(ni)] = static_cast<float>(loc_acc / size_sum);
        out.members[static_cast<size_t>(ni)] = std::move(group_members);
    }
    return out;
}

TokenState apply_merge(const TokenState& state, const MatchResult& match, std::vector<int>* new_to_old) {
    MergedArrays merged = merge_token_arrays(state.tokens, state.sizes, state.loc_ids, state.members, match);

    TokenState out;
    out.tokens = std::move(merged.tokens);
    out.sizes = std::move(merged.sizes);
    out.loc_ids = std::move(merged.loc_ids);
    out.members = std::move(merged.members);
    out.grid = state.grid;
    for (size_t ni = 0; ni < merged.new_to_old.size(); ++ni) {
        const int old = merged.new_to_old[ni];
        if (old == state.class_index) out.class_index = static_cast<int>(ni);
        if (old == state.dist_index) out.dist_index = static_cast<int>(ni);
    }
    if (state.class_index >= 0 && out.class_index < 0) {
        throw std::logic_error("apply_merge: class token did not survive");
    }
    if (new_to_old) *new_to_old = std::move(merged.new_to_old);
    return out;
}

std::optional<float> merged_pair_similarity(const MatchResult& match) {
    if (match.edges.empty()) return std::nullopt;
    double sum = 0.0;
    for (const MatchEdge& e : match.edges) sum += e.score;
    return static_cast<float>(sum / static_cast<double>(match.edges.size()));
}

DropResult drop_by_norm(const TokenState& state, const Tensor& features, int r,
                        const std::set<int>& excluded) {
    const int n = state.count();
    if (features.dim(0) != n) {
        throw std::invalid_argument("drop_by_norm: features rows " + std::to_string(features.dim(0)) +
                                    " != token count " + std::to_string(n));
    }
    if (r < 0) throw std::invalid_argument("drop_by_norm: r must be >= 0");

    std::vector<std::pair<float, int>> ranked;  // (norm, index), candidates only
    const int64_t c = features.dim(1);
    for (int i = 0; i < n; ++i) {
        if (excluded.count(i)) continue;
        const float* row = features.row(i);
        float sq = 0.0f;
        for (int64_t j = 0; j < c; ++j) sq += row[j] * row[j];
        ranked.emplace_back(std::sqrt(sq), i);
    }
    std::sort(ranked.begin(), ranked.end());  // norm asc, then index asc
    const int drop = std::min<int>(r, static_cast<int>(ranked.size()));
    std::vector<uint8_t> dead(static_cast<size_t>(n), 0);
    for (int i = 0; i < drop; ++i) dead[static_cast<size_t>(ranked[static_cast<size_t>(i)].second)] = 1;

    DropResult result;
    result.dropped = drop;
    TokenState& out = result.state;
    const int m = n - drop;
    out.tokens = Tensor({m, state.tokens.dim(1)});
    out.sizes.reserve(static_cast<size_t>(m));
    out.members.reserve(static_cast<size_t>(m));
    out.loc_ids.reserve(static_cast<size_t>(m));
    out.grid = state.grid;
    int ni = 0;
    for (int i = 0; i < n; ++i) {
        if (dead[static_cast<size_t>(i)]) continue;
        const float* src = state.tokens.row(i);
        std::copy(src, src + state.tokens.dim(1), out.tokens.row(ni));
        out.sizes.push_back(state.sizes[static_cast<size_t>(i)]);
        out.members.push_back(state.members[static_cast<size_t>(i)]);
        out.loc_ids.push_back(state.loc_ids[static_cast<size_t>(i)]);
        if (i == state.class_index) out.class_index = ni;
        if (i == state.dist_index) out.dist_index = ni;
        ++ni;
    }
    return result;
}

}  // namespace tomeforge
