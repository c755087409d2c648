// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <set>
#include <vector>

#include "tomeforge/types.hpp"

namespace tomeforge {

/// Feature used as the pairwise similarity (or drop-importance) score.
enum class SimilarityMetric { Random, Xpre, Xattn, K, Q, V };

const char* metric_name(SimilarityMetric m);
SimilarityMetric metric_from_name(std::string_view name);

struct MatchEdge {
    int src = 0;  // token in set A
    int dst = 0;  // token in set B
    float score = 0.0f;
};

/// Kept edges of one bipartite-soft-matching step.
/// Edges are sorted by (score desc, src asc); each src appears at most once;
/// r_effective == edges.size() <= requested r.
struct MatchResult {
    std::vector<MatchEdge> edges;
    std::vector<uint8_t> set_assignment;  // 0 = A, 1 = B, per token index
    int r_effective = 0;
};

/// Pulls the similarity features out of a block's metric bundle.
/// K/Q/V are head-averaged to [N, head_dim]; Xpre/Xattn are the full [N, C]
/// features; Random draws a Gaussian [N, head_dim] matrix from
/// rng.split(layer), so repeated calls for the same layer are identical.
Tensor extract_metric(const MetricBundle& bundle, SimilarityMetric choice, const RngStream& rng);

/// One bipartite soft-matching step over cosine similarity.
///
/// Partition: even token index -> A, odd -> B; indices in `excluded` are
/// forced into B and carry -inf similarity, so they are never a merge source
/// or target (class/distillation tokens and PAD slots both go here).
/// Each A token draws an edge to its most similar B token (ties to the lower
/// B index); the r best edges are kept, ties broken by lower A index.
/// r larger than what is available clamps to r_effective rather than failing.
MatchResult bipartite_soft_match(const Tensor& metric, int r, const std::set<int>& excluded);

/// Replaces every connected group with its size-weighted mean, accumulating
/// destination first and then sources in ascending index order. Sizes add,
/// members union, loc_ids follow the same weighted mean. Survivor order is
/// unmerged-A (original order) then all of B (original order).
/// If `new_to_old` is non-null it receives, per surviving token, the index it
/// had before the merge (groups map to their destination's old index).
TokenState apply_merge(const TokenState& state, const MatchResult& match,
                       std::vector<int>* new_to_old = nullptr);

/// Mean cosine score of the kept edges; absent when no edge was kept.
std::optional<float> merged_pair_similarity(const MatchResult& match);

struct DropResult {
    TokenState state;
    int dropped = 0;
};

/// Token-dropping baseline: removes the r tokens with the smallest L2 norm of
/// their `features` row (ties drop the lower index), never touching excluded
/// indices. Dropped sizes/members are discarded; the coverage invariant is
/// explicitly waived in drop mode.
DropResult drop_by_norm(const TokenState& state, const Tensor& features, int r,
                        const std::set<int>& excluded);

/// Shared merge arithmetic over parallel arrays (used by apply_merge and the
/// fused window path so both produce bit-identical results).
struct MergedArrays {
    Tensor tokens;
    std::vector<float> sizes;
    std::vector<float> loc_ids;
    std::vector<std::vector<int32_t>> members;
    std::vector<int> new_to_old;
};

MergedArrays merge_token_arrays(const Tensor& tokens, const std::vector<float>& sizes,
                                const std::vector<float>& loc_ids,
                                const std::vector<std::vector<int32_t>>& members,
                                const MatchResult& match);

}  // namespace tomeforge
