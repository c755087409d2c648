// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tomeforge/tensor.hpp"

namespace tomeforge {

struct ModelConfig {
    int depth = 12;
    int embed_dim = 384;
    int heads = 6;
    int patch_size = 16;
    int image_size = 224;
    float mlp_ratio = 4.0f;
    int num_classes = 1000;
    bool has_class_token = true;

    int grid_side() const { return image_size / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }
    int head_dim() const { return embed_dim / heads; }
    int mlp_hidden() const { return static_cast<int>(mlp_ratio * static_cast<float>(embed_dim) + 0.5f); }

    /// Throws std::invalid_argument on divisibility violations.
    void validate() const;

    /// vit-s, vit-b, vit-l, deit-s (all patch 16, 224px, 1000 classes).
    static ModelConfig preset(std::string_view name);
};

struct Weights {
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
};

struct GridShape {
    int h = 0;
    int w = 0;
};

/// Per-example token bookkeeping carried through every reduction step.
///
/// Invariants maintained by the reduction ops:
///   - sum of sizes over non-special tokens == original patch count
///   - members sets are pairwise disjoint and cover the full patch set
///   - sizes[i] == members[i].size() for non-special tokens
///   - the class (and distillation) token is never a merge source or target
struct TokenState {
    Tensor tokens;                              // [N, C]
    std::vector<float> sizes;                   // token size: source patches merged in
    std::vector<std::vector<int32_t>> members;  // source patch ids, sorted
    std::vector<float> loc_ids;                 // size-weighted token-id average
    std::optional<GridShape> grid;              // non-special tokens row-major; valid in the local phase
    int class_index = -1;
    int dist_index = -1;

    int count() const { return static_cast<int>(tokens.dim(0)); }
    int channels() const { return static_cast<int>(tokens.dim(1)); }
    bool is_special(int i) const { return i == class_index || i == dist_index; }
    int num_special() const { return (class_index >= 0 ? 1 : 0) + (dist_index >= 0 ? 1 : 0); }

    /// Debug check of the invariants above; throws std::logic_error with the
    /// first violation found.
    void check_invariants(int expected_patches) const;
};

struct MetricBundle {
    int layer = 0;
    Tensor x_pre;   // [N, C] block input, before LN1
    Tensor x_attn;  // [N, C] concatenated head outputs, before the output projection
    Tensor q;       // [heads, N, head_dim]
    Tensor k;
    Tensor v;
};

struct LayerMetrics {
    int layer = 0;
    int tokens = 0;  // token count after this layer's reduction step
    std::optional<float> cossim_pre;
    std::optional<float> cossim_attn;
    std::optional<float> cossim_post;
    std::optional<float> merged_pair_sim;
    int merges = 0;
};

}  // namespace tomeforge
