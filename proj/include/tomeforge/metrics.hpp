// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tomeforge/vit.hpp"

namespace tomeforge {

/// Mean pairwise cosine similarity over all ordered pairs i != j, every token
/// included. Computed via the Gram trick on unit rows: (sum(G) - n)/(n(n-1)),
/// accumulated in f64. Absent for fewer than two tokens.
std::optional<float> layer_cossim(const Tensor& tokens);

/// Analytic MAC/FLOP accounting over a token-count trace.
///
/// The headline gmacs figure follows the community profiler convention the
/// paper's tables use (MAC-dominated, softmax/GELU/LN excluded); gflops is
/// 2 FLOPs per MAC. Non-MAC op counts are carried separately.
struct FlopReport {
    struct LayerCost {
        int layer = 0;
        int tokens_attn = 0;  // count entering the block (attention side)
        int tokens_mlp = 0;   // count after the reduction step (MLP side)
        uint64_t qkv = 0;
        uint64_t logits = 0;
        uint64_t av = 0;
        uint64_t proj = 0;
        uint64_t mlp = 0;
        uint64_t macs() const { return qkv + logits + av + proj + mlp; }
    };

    uint64_t patch_embed = 0;  // MACs
    uint64_t head = 0;         // MACs
    std::vector<LayerCost> layers;
    std::vector<int> trace;
    uint64_t non_mac_flops = 0;  // softmax, GELU, LN estimates

    uint64_t total_macs() const;
    double gmacs() const { return static_cast<double>(total_macs()) / 1e9; }
    double gflops() const { return 2.0 * gmacs(); }
};

/// Per-block MACs with n tokens: QKV 3nC^2, logits n^2 C, AV n^2 C, proj nC^2,
/// MLP 2 nC(mlp_ratio C); attention terms use the block-entry count, the MLP
/// term the post-reduction count. trace must hold depth+1 entries (embed
/// first).
FlopReport flop_count(const ModelConfig& config, const std::vector<int>& trace);

struct BenchResult {
    double imgs_per_sec = 0.0;
    double imgs_per_sec_std = 0.0;
    int batch = 0;
    int runs = 0;
    int warmup = 0;
    std::vector<int> token_trace;
};

/// Wall-clock throughput: `warmup` untimed batch passes, then `runs` timed
/// ones on a monotonic clock; weight loading and image synthesis are outside
/// the timed region. Each batch fans examples across threads. The process
/// should be otherwise idle; concurrent load invalidates the numbers.
BenchResult throughput_bench(const Weights& weights, const ModelConfig& config,
                             const MergeSchedule& schedule, const ForwardOptions& options,
                             int batch = 32, int runs = 50, int warmup = 5, uint64_t image_seed = 0);

}  // namespace tomeforge
