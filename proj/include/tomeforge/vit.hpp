// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "tomeforge/lgtm.hpp"
#include "tomeforge/token_merge.hpp"
#include "tomeforge/types.hpp"

namespace tomeforge {

/// Splits a [3,H,W] image into patch tokens, applies the patch projection,
/// prepends the class (and optional distillation) token, and adds positional
/// embeddings. All sizes start at 1, members[i] = {i}, grid = H/p x W/p.
TokenState patch_embed(const Tensor& image, const Weights& weights, const ModelConfig& config);

/// Pre-LN multi-head self-attention with residual. When prop_attn is set,
/// each key's logits get + log(size_k) before the softmax so merged tokens
/// keep their aggregate influence (log 1 = 0 leaves unmerged tokens alone).
/// Fills `bundle` with X_pre, the pre-projection head outputs X_attn, and
/// per-head Q/K/V for the merger.
void attention_block(TokenState& state, const Weights& weights, int block, const ModelConfig& config,
                     bool prop_attn, MetricBundle& bundle);

void mlp_block(TokenState& state, const Weights& weights, int block, const ModelConfig& config);

enum class ReduceOp { Merge, Drop };

struct ForwardOptions {
    bool prop_attn = true;
    SimilarityMetric metric = SimilarityMetric::K;
    ReduceOp reduce = ReduceOp::Merge;
    uint64_t seed = 0;  // drives the Random metric
    bool collect_metrics = true;
    /// Called with (-1, state) after the embed and (block, state) after each
    /// block's reduction step. Observation only.
    std::function<void(int, const TokenState&)> layer_inspector;
};

struct ForwardResult {
    Tensor logits;  // [num_classes]
    std::vector<LayerMetrics> layers;
    TokenState final_state;
    std::vector<int> token_trace;  // post-embed count, then count after each block
};

/// Full forward pass: per block LN -> attention -> (reduction step between
/// attention and MLP, per the schedule) -> LN -> MLP, then final norm and the
/// classifier head read from the class token.
ForwardResult forward(const Tensor& image, const Weights& weights, const ModelConfig& config,
                      const MergeSchedule& schedule, const ForwardOptions& options = {});

}  // namespace tomeforge
