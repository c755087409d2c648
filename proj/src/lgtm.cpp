// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/lgtm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tomeforge {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

MergeSchedule build_schedule(const ModelConfig& config, int r, const ScheduleOverrides& overrides) {
    config.validate();
    if (r < 0) throw std::invalid_argument("build_schedule: r must be >= 0");

    MergeSchedule sched;
    sched.r = r;
    const int depth = config.depth;

    int s = overrides.s.value_or(depth / 6);
    s = std::clamp(s, 0, depth);

    const int w0 = overrides.w0.value_or(7);
    if (w0 < 1) throw std::invalid_argument("build_schedule: w0 must be >= 1");

    // Transition ends once the window outgrows floor(sqrt(num_patches)).
    const int side = static_cast<int>(std::floor(std::sqrt(static_cast<double>(config.num_patches()))));
    int t = overrides.t.value_or(std::max(0, side - w0 + 1));
    if (overrides.dfe_only) t = 0;
    t = std::clamp(t, 0, depth - s);

    sched.s = s;
    sched.w0 = w0;
    sched.t = t;

    sched.plans.reserve(static_cast<size_t>(depth));
    for (int i = 0; i < depth; ++i) {
        if (r == 0 || i < s) {
            sched.plans.push_back(LayerPlan::skip());
        } else if (i < s + t) {
            sched.plans.push_back(LayerPlan::local(w0 + (i - s), r));
        } else {
            sched.plans.push_back(LayerPlan::global(r));
        }
    }
    return sched;
}

WindowStack partition_windows(const TokenState& state, int w) {
    if (!state.grid.has_value()) {
        throw std::invalid_argument("partition_windows: state has no grid placement");
    }
    if (w < 1) throw std::invalid_argument("partition_windows: window must be >= 1");

    std::vector<int> regular;  // non-special state indices, grid row-major order
    regular.reserve(static_cast<size_t>(state.count()));
    for (int i = 0; i < state.count(); ++i) {
        if (!state.is_special(i)) regular.push_back(i);
    }
    const int k = static_cast<int>(regular.size());
    const int gw = state.grid->w;
    const int gh = state.grid->h;
    if (k > gh * gw) {
        throw std::invalid_argument("partition_windows: " + std::to_string(k) + " tokens exceed grid " +
                                    std::to_string(gh) + "x" + std::to_string(gw));
    }

    WindowStack stack;
    WindowLayout& layout = stack.layout;
    layout.grid_h = gh;
    layout.grid_w = gw;
    layout.window = w;
    layout.padded_h = ceil_div(gh, w) * w;
    layout.padded_w = ceil_div(gw, w) * w;
    layout.windows_y = layout.padded_h / w;
    layout.windows_x = layout.padded_w / w;

    const int slots = layout.total_slots();
    const int c = state.channels();
    layout.slot_to_state.assign(static_cast<size_t>(slots), -1);
    stack.tokens = Tensor({slots, c});
    stack.sizes.assign(static_cast<size_t>(slots), 0.0f);
    stack.loc_ids.assign(static_cast<size_t>(slots), -1.0f);
    stack.members.assign(static_cast<size_t>(slots), {});
    stack.src_index.assign(static_cast<size_t>(slots), -1);
    stack.window_begin.resize(static_cast<size_t>(layout.num_windows()) + 1);

    const int per_window = layout.slots_per_window();
    for (int wi = 0; wi < layout.num_windows(); ++wi) {
        stack.window_begin[static_cast<size_t>(wi)] = wi * per_window;
        const int wy = wi / layout.windows_x;
        const int wx = wi % layout.windows_x;
        for (int dy = 0; dy < w; ++dy) {
            for (int dx = 0; dx < w; ++dx) {
                const int y = wy * w + dy;
                const int x = wx * w + dx;
                const int slot = wi * per_window + dy * w + dx;
                if (x >= gw || y * gw + x >= k) {
                    ++layout.pad_slots;
                    continue;  // PAD
                }
                const int src = regular[static_cast<size_t>(y * gw + x)];
                layout.slot_to_state[static_cast<size_t>(slot)] = src;
                stack.src_index[static_cast<size_t>(slot)] = src;
                const float* in = state.tokens.row(src);
                std::copy(in, in + c, stack.tokens.row(slot));
                stack.sizes[static_cast<size_t>(slot)] = state.sizes[static_cast<size_t>(src)];
                stack.loc_ids[static_cast<size_t>(slot)] = state.loc_ids[static_cast<size_t>(src)];
                stack.members[static_cast<size_t>(slot)] = state.members[static_cast<size_t>(src)];
            }
        }
    }
    stack.window_begin.back() = slots;

    std::vector<std::pair<int, int>> held;  // (state index, role)
    if (state.class_index >= 0) held.emplace_back(state.class_index, 0);
    if (state.dist_index >= 0) held.emplace_back(state.dist_index, 1);
    stack.held_tokens = Tensor({static_cast<int64_t>(held.size()), c});
    for (size_t hi = 0; hi < held.size(); ++hi) {
        const int src = held[hi].first;
        const float* in = state.tokens.row(src);
        std::copy(in, in + c, stack.held_tokens.row(static_cast<int64_t>(hi)));
        stack.held_sizes.push_back(state.sizes[static_cast<size_t>(src)]);
        stack.held_loc_ids.push_back(state.loc_ids[static_cast<size_t>(src)]);
        stack.held_members.push_back(state.members[static_cast<size_t>(src)]);
        stack.held_src.push_back(src);
        stack.held_role.push_back(held[hi].second);
    }
    return stack;
}

TokenState unpartition_windows(const WindowStack& stack) {
    const int64_t c = stack.tokens.dim(1);
    struct Row {
        int src;
        int stack_row;  // -1 means held-out
        int held_row;
    };
    std::vector<Row> rows;
    rows.reserve(stack.src_index.size() + stack.held_src.size());
    for (size_t i = 0; i < stack.src_index.size(); ++i) {
        if (stack.src_index[i] >= 0) rows.push_back({stack.src_index[i], static_cast<int>(i), -1});
    }
    for (size_t i = 0; i < stack.held_src.size(); ++i) {
        rows.push_back({stack.held_src[i], -1, static_cast<int>(i)});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.src < b.src; });

    TokenState out;
    const int n = static_cast<int>(rows.size());
    out.tokens = Tensor({n, c});
    out.sizes.resize(static_cast<size_t>(n));
    out.loc_ids.resize(static_cast<size_t>(n));
    out.members.resize(static_cast<size_t>(n));
    int regular = 0;
    for (int i = 0; i < n; ++i) {
        const Row& row = rows[static_cast<size_t>(i)];
        if (row.stack_row >= 0) {
            const float* in = stack.tokens.row(row.stack_row);
            std::copy(in, in + c, out.tokens.row(i));
            out.sizes[static_cast<size_t>(i)] = stack.sizes[static_cast<size_t>(row.stack_row)];
            out.loc_ids[static_cast<size_t>(i)] = stack.loc_ids[static_cast<size_t>(row.stack_row)];
            out.members[static_cast<size_t>(i)] = stack.members[static_cast<size_t>(row.stack_row)];
            ++regular;
        } else {
            const float* in = stack.held_tokens.row(row.held_row);
            std::copy(in, in + c, out.tokens.row(i));
            out.sizes[static_cast<size_t>(i)] = stack.held_sizes[static_cast<size_t>(row.held_row)];
            out.loc_ids[static_cast<size_t>(i)] = stack.held_loc_ids[static_cast<size_t>(row.held_row)];
            out.members[static_cast<size_t>(i)] = stack.held_members[static_cast<size_t>(row.held_row)];
            if (stack.held_role[static_cast<size_t>(row.held_row)] == 0) out.class_index = i;
            if (stack.held_role[static_cast<size_t>(row.held_row)] == 1) out.dist_index = i;
        }
    }
    out.grid = GridShape{ceil_div(std::max(regular, 1), stack.layout.grid_w), stack.layout.grid_w};
    return out;
}

Tensor stack_rows(const WindowStack& stack, const Tensor& per_token) {
    const int64_t c = per_token.dim(1);
    const int64_t rows = static_cast<int64_t>(stack.src_index.size());
    Tensor out({rows, c});
    for (int64_t i = 0; i < rows; ++i) {
        const int src = stack.src_index[static_cast<size_t>(i)];
        if (src < 0) continue;  // PAD rows stay zero
        const float* in = per_token.row(src);
        std::copy(in, in + c, out.row(i));
    }
    return out;
}

TokenState local_merge_step(const TokenState& state, const Tensor& metric, int w, int r_total,
                            LocalMergeStats* stats) {
    if (metric.dim(0) != state.count()) {
        throw std::invalid_argument("local_merge_step: metric rows " + std::to_string(metric.dim(0)) +
                                    " != token count " + std::to_string(state.count()));
    }
    WindowStack stack = partition_windows(state, w);
    const Tensor stacked_metric = stack_rows(stack, metric);

    const int num_windows = stack.layout.num_windows();
    const int r_win = num_windows > 0 ? ceil_div(std::max(r_total, 0), num_windows) : 0;
    if (stats) {
        stats->merges = 0;
        stats->num_windows = num_windows;
        stats->r_per_window = r_win;
        stats->window_merges.assign(static_cast<size_t>(num_windows), 0);
        stats->edge_scores.clear();
    }

    WindowStack merged;
    merged.layout = stack.layout;
    merged.held_tokens = stack.held_tokens;
    merged.held_sizes = stack.held_sizes;
    merged.held_loc_ids = stack.held_loc_ids;
    merged.held_members = stack.held_members;
    merged.held_src = stack.held_src;
    merged.held_role = stack.held_role;
    merged.window_begin.assign(1, 0);

    const int c = state.channels();
    std::vector<float> token_rows;
    for (int wi = 0; wi < num_windows; ++wi) {
        const int begin = stack.window_begin[static_cast<size_t>(wi)];
        const int end = stack.window_begin[static_cast<size_t>(wi) + 1];
        const int slots = end - begin;

        Tensor win_metric({slots, stacked_metric.dim(1)});
        std::copy(stacked_metric.row(begin), stacked_metric.row(begin) + slots * stacked_metric.dim(1),
                  win_metric.data());
        Tensor win_tokens({slots, c});
        std::copy(stack.tokens.row(begin), stack.tokens.row(begin) + slots * c, win_tokens.data());
        std::vector<float> win_sizes(stack.sizes.begin() + begin, stack.sizes.begin() + end);
        std::vector<float> win_locs(stack.loc_ids.begin() + begin, stack.loc_ids.begin() + end);
        std::vector<std::vector<int32_t>> win_members(stack.members.begin() + begin,
                                                      stack.members.begin() + end);

        std::set<int> pads;
        for (int sl = 0; sl < slots; ++sl) {
            if (stack.src_index[static_cast<size_t>(begin + sl)] < 0) pads.insert(sl);
        }

        const MatchResult match = bipartite_soft_match(win_metric, r_win, pads);
        MergedArrays result = merge_token_arrays(win_tokens, win_sizes, win_locs, win_members, match);

        if (stats) {
            stats->merges += match.r_effective;
            stats->window_merges[static_cast<size_t>(wi)] = match.r_effective;
            for (const MatchEdge& e : match.edges) stats->edge_scores.push_back(e.score);
        }

        const int out_rows = static_cast<int>(result.new_to_old.size());
        token_rows.insert(token_rows.end(), result.tokens.data(), result.tokens.data() + out_rows * c);
        merged.sizes.insert(merged.sizes.end(), result.sizes.begin(), result.sizes.end());
        merged.loc_ids.insert(merged.loc_ids.end(), result.loc_ids.begin(), result.loc_ids.end());
        merged.members.insert(merged.members.end(), std::make_move_iterator(result.members.begin()),
                              std::make_move_iterator(result.members.end()));
        for (int row = 0; row < out_rows; ++row) {
            const int old_slot = begin + result.new_to_old[static_cast<size_t>(row)];
            merged.src_index.push_back(stack.src_index[static_cast<size_t>(old_slot)]);
        }
        merged.window_begin.push_back(static_cast<int>(merged.src_index.size()));
    }
    merged.tokens = Tensor({static_cast<int64_t>(merged.src_index.size()), c}, std::move(token_rows));

    TokenState out = unpartition_windows(merged);
    track_locations(out);
    return out;
}

void track_locations(TokenState& state) {
    if (!state.grid.has_value()) {
        throw std::invalid_argument("track_locations: state has no grid placement");
    }
    struct Key {
        float loc;
        int index;
    };
    std::vector<int> regular_slots;  // positions in the state holding non-specials
    std::vector<Key> keys;
    for (int i = 0; i < state.count(); ++i) {
        if (state.is_special(i)) continue;
        regular_slots.push_back(i);
        keys.push_back({state.loc_ids[static_cast<size_t>(i)], i});
    }
    std::vector<int> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (keys[static_cast<size_t>(a)].loc != keys[static_cast<size_t>(b)].loc) {
            return keys[static_cast<size_t>(a)].loc < keys[static_cast<size_t>(b)].loc;
        }
        return keys[static_cast<size_t>(a)].index < keys[static_cast<size_t>(b)].index;
    });

    const int64_t c = state.tokens.dim(1);
    Tensor tokens(state.tokens.shape());
    std::vector<float> sizes(state.sizes.size());
    std::vector<float> locs(state.loc_ids.size());
    std::vector<std::vector<int32_t>> members(state.members.size());
    // Specials keep their positions; sorted non-specials fill the rest.
    std::vector<int> new_index(static_cast<size_t>(state.count()), -1);
    for (int i = 0; i < state.count(); ++i) {
        if (state.is_special(i)) new_index[static_cast<size_t>(i)] = i;
    }
    size_t cursor = 0;
    for (int i = 0; i < state.count(); ++i) {
        if (state.is_special(i)) continue;  // destination slot kept by a special
        const int src = regular_slots[static_cast<size_t>(order[cursor++])];
        new_index[static_cast<size_t>(src)] = i;
    }
    for (int src = 0; src < state.count(); ++src) {
        const int dst = new_index[static_cast<size_t>(src)];
        const float* in = state.tokens.row(src);
        std::copy(in, in + c, tokens.row(dst));
        sizes[static_cast<size_t>(dst)] = state.sizes[static_cast<size_t>(src)];
        locs[static_cast<size_t>(dst)] = state.loc_ids[static_cast<size_t>(src)];
        members[static_cast<size_t>(dst)] = std::move(state.members[static_cast<size_t>(src)]);
    }
    state.tokens = std::move(tokens);
    state.sizes = std::move(sizes);
    state.loc_ids = std::move(locs);
    state.members = std::move(members);

    const int regular = state.count() - state.num_special();
    state.grid = GridShape{ceil_div(std::max(regular, 1), state.grid->w), state.grid->w};
}

std::vector<int> predict_token_trace(const ModelConfig& config, const MergeSchedule& schedule,
                                     int num_special) {
    if (schedule.depth() != config.depth) {
        throw std::invalid_argument("predict_token_trace: schedule length " +
                                    std::to_string(schedule.depth()) + " != depth " +
                                    std::to_string(config.depth));
    }
    int k = config.num_patches();
    const int gw = config.grid_side();
    std::vector<int> specials(static_cast<size_t>(num_special));
    std::iota(specials.begin(), specials.end(), 0);

    std::vector<int> trace;
    trace.push_back(k + num_special);

    for (const LayerPlan& plan : schedule.plans) {
        switch (plan.kind) {
            case LayerPlan::Kind::Skip:
                break;
            case LayerPlan::Kind::Local: {
                const int w = plan.window;
                const int gh = ceil_div(std::max(k, 1), gw);
                const int wy = ceil_div(gh, w);
                const int wx = ceil_div(gw, w);
                const int num_windows = wy * wx;
                const int r_win = ceil_div(std::max(plan.r, 0), num_windows);
                int total = 0;
                for (int wi = 0; wi < num_windows; ++wi) {
                    const int oy = (wi / wx) * w;
                    const int ox = (wi % wx) * w;
                    int a_real = 0, b_real = 0;
                    for (int dy = 0; dy < w; ++dy) {
                        for (int dx = 0; dx < w; ++dx) {
                            const int y = oy + dy, x = ox + dx;
                            if (x >= gw || y * gw + x >= k) continue;
                            ((dy * w + dx) % 2 == 0 ? a_real : b_real) += 1;
                        }
                    }
                    total += (b_real > 0) ? std::min(r_win, a_real) : 0;
                }
                k -= total;
                // track_locations puts specials first, so positions reset.
                std::iota(specials.begin(), specials.end(), 0);
                break;
            }
            case LayerPlan::Kind::Global: {
                const int n = k + num_special;
                int evens = (n + 1) / 2;
                int even_specials = 0;
                for (int sp : specials) {
                    if (sp % 2 == 0) ++even_specials;
                }
                const int a_count = evens - even_specials;
                const int b_regular = n - a_count - num_special;
                const int r_eff = (b_regular >= 1) ? std::min(plan.r, a_count) : 0;
                // Specials sit in B; their new index is |A survivors| plus
                // their rank within B (B keeps its order, B never shrinks).
                std::vector<int> next;
                next.reserve(specials.size());
                for (int sp : specials) {
                    int rank = 0;
                    for (int pos = 0; pos < sp; ++pos) {
                        const bool in_b = (pos % 2 == 1) ||
                                          std::find(specials.begin(), specials.end(), pos) != specials.end();
                        if (in_b) ++rank;
                    }
                    next.push_back((a_count - r_eff) + rank);
                }
                specials = std::move(next);
                k -= r_eff;
                break;
            }
        }
        trace.push_back(k + num_special);
    }
    return trace;
}

}  // namespace tomeforge
