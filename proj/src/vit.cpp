// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/vit.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "tomeforge/metrics.hpp"

namespace tomeforge {

namespace {

std::string block_key(int block, const char* suffix) {
    return "blocks." + std::to_string(block) + "." + suffix;
}

std::set<int> protected_indices(const TokenState& state) {
    std::set<int> p;
    if (state.class_index >= 0) p.insert(state.class_index);
    if (state.dist_index >= 0) p.insert(state.dist_index);
    return p;
}

}  // namespace

TokenState patch_embed(const Tensor& image, const Weights& weights, const ModelConfig& config) {
    config.validate();
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != config.image_size ||
        image.dim(2) != config.image_size) {
        throw std::invalid_argument("patch_embed: image shape " + shape_str(image.shape()) +
                                    " does not match [3," + std::to_string(config.image_size) + "," +
                                    std::to_string(config.image_size) + "]");
    }
    const int p = config.patch_size;
    const int g = config.grid_side();
    const int patches = config.num_patches();
    const int c = config.embed_dim;
    const bool with_dist = weights.has("dist_token");
    const int specials = with_dist ? 2 : 1;
    const int n = patches + specials;

    const Tensor& proj = weights.at("patch_embed.weight");  // [C, 3, p, p]
    const Tensor& bias = weights.at("patch_embed.bias");
    const Tensor& pos = weights.at("pos_embed");  // [n, C]
    if (pos.dim(0) != n) {
        throw std::invalid_argument("patch_embed: pos_embed rows " + std::to_string(pos.dim(0)) +
                                    " != token count " + std::to_string(n));
    }

    TokenState state;
    state.tokens = Tensor({n, c});
    state.sizes.assign(static_cast<size_t>(n), 1.0f);
    state.members.assign(static_cast<size_t>(n), {});
    state.loc_ids.assign(static_cast<size_t>(n), -1.0f);
    state.class_index = 0;
    state.dist_index = with_dist ? 1 : -1;
    state.grid = GridShape{g, g};

    const Tensor& cls = weights.at("cls_token");
    for (int j = 0; j < c; ++j) state.tokens(0, j) = cls(j);
    if (with_dist) {
        const Tensor& dist = weights.at("dist_token");
        for (int j = 0; j < c; ++j) state.tokens(1, j) = dist(j);
    }

    // im2col per patch: channel-major (ch, dy, dx), matching the flattened
    // [C, 3*p*p] projection rows.
    std::vector<float> col(static_cast<size_t>(3 * p * p));
    for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
            size_t ci = 0;
            for (int ch = 0; ch < 3; ++ch) {
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) {
                        col[ci++] = image(ch, py * p + dy, px * p + dx);
                    }
                }
            }
            const int patch = py * g + px;
            const int row = specials + patch;
            float* out = state.tokens.row(row);
            const float* w = proj.data();
            const int64_t stride = 3 * p * p;
            for (int o = 0; o < c; ++o) {
                float acc = 0.0f;
                const float* wrow = w + o * stride;
                for (int64_t kk = 0; kk < stride; ++kk) acc += col[static_cast<size_t>(kk)] * wrow[kk];
                out[o] = acc + bias(o);
            }
            state.members[static_cast<size_t>(row)] = {patch};
            state.loc_ids[static_cast<size_t>(row)] = static_cast<float>(patch);
        }
    }

    for (int i = 0; i < n; ++i) {
        float* row = state.tokens.row(i);
        const float* prow = pos.row(i);
        for (int j = 0; j < c; ++j) row[j] += prow[j];
    }
    return state;
}

void attention_block(TokenState& state, const Weights& weights, int block, const ModelConfig& config,
                     bool prop_attn, MetricBundle& bundle) {
    const int n = state.count();
    const int c = config.embed_dim;
    const int heads = config.heads;
    const int hd = config.head_dim();

    bundle.layer = block;
    bundle.x_pre = state.tokens;

    const Tensor normed = layer_norm(state.tokens, weights.at(block_key(block, "ln1.weight")),
                                     weights.at(block_key(block, "ln1.bias")));
    const Tensor qkv = linear(normed, weights.at(block_key(block, "attn.qkv.weight")),
                              weights.at(block_key(block, "attn.qkv.bias")));  // [N, 3C]

    bundle.q = Tensor({heads, n, hd});
    bundle.k = Tensor({heads, n, hd});
    bundle.v = Tensor({heads, n, hd});
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            const float* row = qkv.row(i);
            for (int j = 0; j < hd; ++j) {
                bundle.q(h, i, j) = row[h * hd + j];
                bundle.k(h, i, j) = row[c + h * hd + j];
                bundle.v(h, i, j) = row[2 * c + h * hd + j];
            }
        }
    }

    std::vector<float> key_bias(static_cast<size_t>(n), 0.0f);
    if (prop_attn) {
        for (int i = 0; i < n; ++i) key_bias[static_cast<size_t>(i)] = std::log(state.sizes[static_cast<size_t>(i)]);
    }

    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    bundle.x_attn = Tensor({n, c});
    Tensor logits({n, n});
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            float* lrow = logits.row(i);
            for (int j = 0; j < n; ++j) {
                float dot = 0.0f;
                for (int d = 0; d < hd; ++d) dot += bundle.q(h, i, d) * bundle.k(h, j, d);
                lrow[j] = dot * scale + key_bias[static_cast<size_t>(j)];
            }
        }
        const Tensor attn = softmax_lastdim(logits);
        for (int i = 0; i < n; ++i) {
            float* out = bundle.x_attn.row(i) + h * hd;
            const float* arow = attn.row(i);
            for (int j = 0; j < n; ++j) {
                const float w = arow[j];
                for (int d = 0; d < hd; ++d) out[d] += w * bundle.v(h, j, d);
            }
        }
    }

    const Tensor projected = linear(bundle.x_attn, weights.at(block_key(block, "attn.proj.weight")),
                                    weights.at(block_key(block, "attn.proj.bias")));
    add_inplace(state.tokens, projected);
}

void mlp_block(TokenState& state, const Weights& weights, int block, const ModelConfig& config) {
    (void)config;
    const Tensor normed = layer_norm(state.tokens, weights.at(block_key(block, "ln2.weight")),
                                     weights.at(block_key(block, "ln2.bias")));
    Tensor hidden = linear(normed, weights.at(block_key(block, "mlp.fc1.weight")),
                           weights.at(block_key(block, "mlp.fc1.bias")));
    gelu_tanh_inplace(hidden);
    const Tensor out = linear(hidden, weights.at(block_key(block, "mlp.fc2.weight")),
                              weights.at(block_key(block, "mlp.fc2.bias")));
    add_inplace(state.tokens, out);
}

ForwardResult forward(const Tensor& image, const Weights& weights, const ModelConfig& config,
                      const MergeSchedule& schedule, const ForwardOptions& options) {
    if (schedule.depth() != config.depth) {
        throw std::invalid_argument("forward: schedule length " + std::to_string(schedule.depth()) +
                                    " != model depth " + std::to_string(config.depth));
    }
    const RngStream metric_rng(options.seed);

    ForwardResult result;
    TokenState state = patch_embed(image, weights, config);
    result.token_trace.push_back(state.count());
    if (options.layer_inspector) options.layer_inspector(-1, state);

    for (int block = 0; block < config.depth; ++block) {
        LayerMetrics lm;
        lm.layer = block;
        if (options.collect_metrics) lm.cossim_pre = layer_cossim(state.tokens);

        MetricBundle bundle;
        attention_block(state, weights, block, config, options.prop_attn, bundle);
        if (options.collect_metrics) {
            lm.cossim_attn = layer_cossim(bundle.x_attn);
            lm.cossim_post = layer_cossim(state.tokens);
        }

        const LayerPlan& plan = schedule.plans[static_cast<size_t>(block)];
        switch (plan.kind) {
            case LayerPlan::Kind::Skip:
                break;
            case LayerPlan::Kind::Local: {
                const Tensor metric = extract_metric(bundle, options.metric, metric_rng);
                if (options.reduce == ReduceOp::Drop) {
                    const int before = state.count();
                    DropResult dropped = drop_by_norm(state, metric, plan.r, protected_indices(state));
                    state = std::move(dropped.state);
                    track_locations(state);
                    lm.merges = before - state.count();
                } else {
                    LocalMergeStats stats;
                    state = local_merge_step(state, metric, plan.window, plan.r, &stats);
                    lm.merges = stats.merges;
                    if (!stats.edge_scores.empty()) {
                        double sum = 0.0;
                        for (float sc : stats.edge_scores) sum += sc;
                        lm.merged_pair_sim =
                            static_cast<float>(sum / static_cast<double>(stats.edge_scores.size()));
                    }
                }
                break;
            }
            case LayerPlan::Kind::Global: {
                const Tensor metric = extract_metric(bundle, options.metric, metric_rng);
                if (options.reduce == ReduceOp::Drop) {
                    const int before = state.count();
                    DropResult dropped = drop_by_norm(state, metric, plan.r, protected_indices(state));
                    state = std::move(dropped.state);
                    lm.merges = before - state.count();
                } else {
                    const MatchResult match = bipartite_soft_match(metric, plan.r, protected_indices(state));
                    lm.merged_pair_sim = merged_pair_similarity(match);
                    lm.merges = match.r_effective;
                    state = apply_merge(state, match);
                }
                state.grid.reset();  // spatial placement is meaningless from here on
                break;
            }
        }
        lm.tokens = state.count();
        result.token_trace.push_back(state.count());
        result.layers.push_back(lm);
        if (options.layer_inspector) options.layer_inspector(block, state);

        mlp_block(state, weights, block, config);
    }

    const Tensor normed = layer_norm(state.tokens, weights.at("norm.weight"), weights.at("norm.bias"));
    Tensor cls_row({1, config.embed_dim});
    const float* src = normed.row(state.class_index);
    std::copy(src, src + config.embed_dim, cls_row.data());
    const Tensor logits = linear(cls_row, weights.at("head.weight"), weights.at("head.bias"));
    result.logits = Tensor({config.num_classes},
                           std::vector<float>(logits.data(), logits.data() + config.num_classes));
    result.final_state = std::move(state);
    return result;
}

}  // namespace tomeforge
