// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "tomeforge/token_merge.hpp"
#include "tomeforge/types.hpp"

namespace tomeforge {

struct LayerPlan {
    enum class Kind { Skip, Local, Global };
    Kind kind = Kind::Skip;
    int window = 0;  // Local only
    int r = 0;       // Local: r_total for the layer; Global: pairs to merge

    static LayerPlan skip() { return {Kind::Skip, 0, 0}; }
    static LayerPlan local(int window, int r) { return {Kind::Local, window, r}; }
    static LayerPlan global(int r) { return {Kind::Global, 0, r}; }
};

/// Per-layer plan: Skip^s, then Local with windows w0, w0+1, ..., w0+t-1,
/// then Global{r} for the remaining blocks.
struct MergeSchedule {
    std::vector<LayerPlan> plans;
    int s = 0;
    int w0 = 0;
    int t = 0;
    int r = 0;

    int depth() const { return static_cast<int>(plans.size()); }
};

struct ScheduleOverrides {
    std::optional<int> s;
    std::optional<int> w0;
    std::optional<int> t;
    bool dfe_only = false;  // no local phase: Skip^s then Global
};

/// Derives the layer plan from (depth, patch grid, r):
///   s  = depth / 6 (integer division)
///   w0 = 7
///   t  = smallest t with w0 + t > floor(sqrt(num_patches)), clamped to the
///        remaining depth; a w0 already past that bound degenerates to t = 0
///        (all Global after the skip phase).
/// r = 0 yields an all-Skip schedule.
MergeSchedule build_schedule(const ModelConfig& config, int r, const ScheduleOverrides& overrides = {});

/// Window geometry over the current token grid. The grid is padded on the
/// bottom and right up to multiples of w; the origin stays at the top-left.
struct WindowLayout {
    int grid_h = 0, grid_w = 0;      // current (unpadded) grid extents
    int padded_h = 0, padded_w = 0;  // multiples of window
    int window = 0;
    int windows_y = 0, windows_x = 0;

    int num_windows() const { return windows_y * windows_x; }
    int slots_per_window() const { return window * window; }
    int total_slots() const { return num_windows() * slots_per_window(); }
    int pad_slots = 0;

    /// slot -> index in the source TokenState, or -1 for a PAD slot.
    /// Window-major, row-major within each window. Every non-PAD source
    /// index appears exactly once.
    std::vector<int> slot_to_state;
};

/// Windows flattened into one batch-stackable run of rows. PAD slots carry a
/// zero embedding, size 0, empty members, loc -1, and stay merge-inert.
/// Held-out specials (class/distillation) ride along so unpartition can
/// restore them.
struct WindowStack {
    WindowLayout layout;
    Tensor tokens;  // [rows, C], window-major runs
    std::vector<float> sizes;
    std::vector<float> loc_ids;
    std::vector<std::vector<int32_t>> members;
    std::vector<int> src_index;     // per row: original state index, -1 = PAD
    std::vector<int> window_begin;  // num_windows + 1 row offsets

    Tensor held_tokens;
    std::vector<float> held_sizes;
    std::vector<float> held_loc_ids;
    std::vector<std::vector<int32_t>> held_members;
    std::vector<int> held_src;   // original state indices of class/dist
    std::vector<int> held_role;  // 0 = class, 1 = dist
};

/// Splits the non-special tokens of a grid-placed state into w x w windows.
/// Throws std::invalid_argument when the state has no grid placement.
WindowStack partition_windows(const TokenState& state, int w);

/// Inverse of partition_windows: drops PAD rows, restores the held-out
/// specials, and orders survivors by their original state index, so a
/// partition/unpartition round trip with no merging is bit-identical.
/// The grid is recompacted to ceil(K / grid_w) rows.
TokenState unpartition_windows(const WindowStack& stack);

/// Gathers per-token rows (e.g. a similarity metric) into stack row order.
Tensor stack_rows(const WindowStack& stack, const Tensor& per_token);

struct LocalMergeStats {
    int merges = 0;
    int num_windows = 0;
    int r_per_window = 0;  // requested ceil(r_total / numW)
    std::vector<int> window_merges;
    std::vector<float> edge_scores;  // kept-edge scores pooled across windows
};

/// One local layer: partition, then bipartite_soft_match + merge with
/// ceil(r_total / numW) per window executed on the fused stack, then
/// unpartition and re-sort by tracked locations. The realized reduction can
/// exceed r_total (ceiling split) and is reported via stats.
TokenState local_merge_step(const TokenState& state, const Tensor& metric, int w, int r_total,
                            LocalMergeStats* stats = nullptr);

/// Post-merge location bookkeeping: non-special tokens are re-ordered by
/// ascending loc_ids (ties keep the current order) and laid row-major onto a
/// compacted grid of the current width. Specials keep their positions.
void track_locations(TokenState& state);

/// Analytic token-count trace for a schedule: entry 0 is the post-embed count,
/// entry i+1 the count after block i's reduction. Matches the executed trace
/// exactly, including ceiling splits, per-window clamping, and PAD geometry.
std::vector<int> predict_token_trace(const ModelConfig& config, const MergeSchedule& schedule,
                                     int num_special = 1);

}  // namespace tomeforge
