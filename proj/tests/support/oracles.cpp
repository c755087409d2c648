// SPDX-License-Identifier: Apache-2.0

#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tomeforge/lgtm.hpp"
#include "tomeforge/tensor.hpp"

namespace oracles {

using tomeforge::MatchEdge;
using tomeforge::MatchResult;
using tomeforge::ModelConfig;
using tomeforge::Tensor;
using tomeforge::TokenState;
using tomeforge::Weights;

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (int64_t kk = 0; kk < k; ++kk) acc += a(i, kk) * b(kk, j);
            c(i, j) = acc;
        }
    }
    return c;
}

std::vector<double> softmax_row_f64(const std::vector<float>& row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> e(row.size());
    double sum = 0.0;
    for (size_t i = 0; i < row.size(); ++i) {
        e[i] = std::exp(static_cast<double>(row[i]) - mx);
        sum += e[i];
    }
    for (double& v : e) v /= sum;
    return e;
}

std::vector<double> layer_norm_row_f64(const std::vector<float>& row, const std::vector<float>& gamma,
                                       const std::vector<float>& beta, double eps) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= n;
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) {
        out[i] = gamma[i] * ((row[i] - mean) / std::sqrt(var + eps)) + beta[i];
    }
    return out;
}

MatchResult match_exhaustive(const Tensor& metric, int r, const std::set<int>& excluded) {
    const int n = static_cast<int>(metric.dim(0));
    const int c = static_cast<int>(metric.dim(1));

    // f32 unit rows, matching the documented arithmetic.
    std::vector<std::vector<float>> unit(static_cast<size_t>(n), std::vector<float>(static_cast<size_t>(c)));
    for (int i = 0; i < n; ++i) {
        float sq = 0.0f;
        for (int j = 0; j < c; ++j) sq += metric(i, j) * metric(i, j);
        const float norm = std::max(std::sqrt(sq), 1e-12f);
        for (int j = 0; j < c; ++j) unit[static_cast<size_t>(i)][static_cast<size_t>(j)] = metric(i, j) / norm;
    }

    MatchResult result;
    result.set_assignment.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        result.set_assignment[static_cast<size_t>(i)] = (i % 2 == 1 || excluded.count(i)) ? 1 : 0;
    }

    // Full score matrix, then per-A argmax over eligible B columns.
    const float neg_inf = -std::numeric_limits<float>::infinity();
    std::vector<std::vector<float>> scores(static_cast<size_t>(n),
                                           std::vector<float>(static_cast<size_t>(n), neg_inf));
    for (int a = 0; a < n; ++a) {
        if (result.set_assignment[static_cast<size_t>(a)] != 0) continue;
        for (int b = 0; b < n; ++b) {
            if (result.set_assignment[static_cast<size_t>(b)] != 1) continue;
            if (excluded.count(b)) continue;
            float dot = 0.0f;
            for (int j = 0; j < c; ++j) {
                dot += unit[static_cast<size_t>(a)][static_cast<size_t>(j)] *
                       unit[static_cast<size_t>(b)][static_cast<size_t>(j)];
            }
            scores[static_cast<size_t>(a)][static_cast<size_t>(b)] = dot;
        }
    }

    std::vector<MatchEdge> best;
    for (int a = 0; a < n; ++a) {
        if (result.set_assignment[static_cast<size_t>(a)] != 0) continue;
        int arg = -1;
        float mx = neg_inf;
        for (int b = 0; b < n; ++b) {
            const float s = scores[static_cast<size_t>(a)][static_cast<size_t>(b)];
            if (s > mx) {
                mx = s;
                arg = b;
            }
        }
        if (arg >= 0) best.push_back({a, arg, mx});
    }
    std::stable_sort(best.begin(), best.end(), [](const MatchEdge& x, const MatchEdge& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.src < y.src;
    });
    if (static_cast<int>(best.size()) > r) best.resize(static_cast<size_t>(std::max(r, 0)));
    result.edges = std::move(best);
    result.r_effective = static_cast<int>(result.edges.size());
    return result;
}

double cossim_double_loop(const Tensor& tokens) {
    const int64_t n = tokens.dim(0), c = tokens.dim(1);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double dot = 0.0, ni = 0.0, nj = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                dot += static_cast<double>(tokens(i, k)) * tokens(j, k);
                ni += static_cast<double>(tokens(i, k)) * tokens(i, k);
                nj += static_cast<double>(tokens(j, k)) * tokens(j, k);
            }
            sum += dot / (std::max(std::sqrt(ni), 1e-12) * std::max(std::sqrt(nj), 1e-12));
        }
    }
    return sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

uint64_t ref_mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t ref_splitmix_next(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    return ref_mix64(state);
}

uint64_t ref_split_seed(uint64_t parent_seed, uint64_t tag) {
    return ref_mix64(parent_seed + 0x9E3779B97F4A7C15ULL * (tag + 1));
}

float ref_gaussian(uint64_t& state) {
    const double u1 = static_cast<double>(ref_splitmix_next(state) >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(ref_splitmix_next(state) >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
    return static_cast<float>(radius * std::cos(2.0 * 3.14159265358979323846 * u2));
}

uint64_t ref_fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

Tensor dense_forward(const Tensor& image, const Weights& weights, const ModelConfig& config,
                     bool prop_attn) {
    using namespace tomeforge;
    const int p = config.patch_size;
    const int g = config.grid_side();
    const int c = config.embed_dim;
    const int n = config.num_patches() + 1;
    const int heads = config.heads;
    const int hd = config.head_dim();

    Tensor x({n, c});
    const Tensor& cls = weights.at("cls_token");
    for (int j = 0; j < c; ++j) x(0, j) = cls(j);
    const Tensor& proj = weights.at("patch_embed.weight");
    const Tensor& pbias = weights.at("patch_embed.bias");
    std::vector<float> col(static_cast<size_t>(3 * p * p));
    for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
            size_t ci = 0;
            for (int ch = 0; ch < 3; ++ch) {
                for (int dy = 0; dy < p; ++dy) {
                    for (int dx = 0; dx < p; ++dx) col[ci++] = image(ch, py * p + dy, px * p + dx);
                }
            }
            float* out = x.row(1 + py * g + px);
            for (int o = 0; o < c; ++o) {
                float acc = 0.0f;
                const float* wrow = proj.data() + static_cast<int64_t>(o) * 3 * p * p;
                for (size_t kk = 0; kk < col.size(); ++kk) acc += col[kk] * wrow[kk];
                out[o] = acc + pbias(o);
            }
        }
    }
    const Tensor& pos = weights.at("pos_embed");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) x(i, j) += pos(i, j);
    }

    const float log_size_one = prop_attn ? std::log(1.0f) : 0.0f;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    for (int block = 0; block < config.depth; ++block) {
        const std::string b = "blocks." + std::to_string(block) + ".";
        const Tensor normed = layer_norm(x, weights.at(b + "ln1.weight"), weights.at(b + "ln1.bias"));
        const Tensor qkv = linear(normed, weights.at(b + "attn.qkv.weight"), weights.at(b + "attn.qkv.bias"));

        Tensor q({heads, n, hd}), k({heads, n, hd}), v({heads, n, hd});
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < n; ++i) {
                const float* row = qkv.row(i);
                for (int j = 0; j < hd; ++j) {
                    q(h, i, j) = row[h * hd + j];
                    k(h, i, j) = row[c + h * hd + j];
                    v(h, i, j) = row[2 * c + h * hd + j];
                }
            }
        }
        Tensor ctx({n, c});
        Tensor logits({n, n});
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    float dot = 0.0f;
                    for (int d = 0; d < hd; ++d) dot += q(h, i, d) * k(h, j, d);
                    logits(i, j) = dot * scale + log_size_one;
                }
            }
            const Tensor attn = softmax_lastdim(logits);
            for (int i = 0; i < n; ++i) {
                float* out = ctx.row(i) + h * hd;
                for (int j = 0; j < n; ++j) {
                    const float w = attn(i, j);
                    for (int d = 0; d < hd; ++d) out[d] += w * v(h, j, d);
                }
            }
        }
        const Tensor attn_out = linear(ctx, weights.at(b + "attn.proj.weight"), weights.at(b + "attn.proj.bias"));
        add_inplace(x, attn_out);

        const Tensor normed2 = layer_norm(x, weights.at(b + "ln2.weight"), weights.at(b + "ln2.bias"));
        Tensor hidden = linear(normed2, weights.at(b + "mlp.fc1.weight"), weights.at(b + "mlp.fc1.bias"));
        gelu_tanh_inplace(hidden);
        const Tensor mlp_out = linear(hidden, weights.at(b + "mlp.fc2.weight"), weights.at(b + "mlp.fc2.bias"));
        add_inplace(x, mlp_out);
    }

    const Tensor normed = layer_norm(x, weights.at("norm.weight"), weights.at("norm.bias"));
    Tensor cls_row({1, c});
    std::copy(normed.row(0), normed.row(0) + c, cls_row.data());
    const Tensor logits = linear(cls_row, weights.at("head.weight"), weights.at("head.bias"));
    return Tensor({config.num_classes},
                  std::vector<float>(logits.data(), logits.data() + config.num_classes));
}

TokenState sequential_local_merge(const TokenState& state, const Tensor& metric, int w, int r_total) {
    using namespace tomeforge;
    const WindowStack stack = partition_windows(state, w);
    const int num_windows = stack.layout.num_windows();
    const int r_win = (r_total + num_windows - 1) / num_windows;
    const int c = state.channels();

    struct Survivor {
        int src;
        std::vector<float> row;
        float size;
        float loc;
        std::vector<int32_t> members;
    };
    std::vector<Survivor> survivors;

    for (int wi = 0; wi < num_windows; ++wi) {
        const int begin = stack.window_begin[static_cast<size_t>(wi)];
        const int end = stack.window_begin[static_cast<size_t>(wi) + 1];
        const int slots = end - begin;

        TokenState window;
        window.tokens = Tensor({slots, c});
        window.class_index = -1;
        Tensor win_metric({slots, metric.dim(1)});
        std::set<int> pads;
        for (int sl = 0; sl < slots; ++sl) {
            const int src = stack.src_index[static_cast<size_t>(begin + sl)];
            if (src < 0) {
                pads.insert(sl);
                window.sizes.push_back(0.0f);
                window.members.push_back({});
                window.loc_ids.push_back(-1.0f);
                continue;
            }
            std::copy(state.tokens.row(src), state.tokens.row(src) + c, window.tokens.row(sl));
            std::copy(metric.row(src), metric.row(src) + metric.dim(1), win_metric.row(sl));
            window.sizes.push_back(state.sizes[static_cast<size_t>(src)]);
            window.members.push_back(state.members[static_cast<size_t>(src)]);
            window.loc_ids.push_back(state.loc_ids[static_cast<size_t>(src)]);
        }

        const MatchResult match = bipartite_soft_match(win_metric, r_win, pads);
        std::vector<int> new_to_old;
        const TokenState merged = apply_merge(window, match, &new_to_old);
        for (int row = 0; row < merged.count(); ++row) {
            const int src = stack.src_index[static_cast<size_t>(begin + new_to_old[static_cast<size_t>(row)])];
            if (src < 0) continue;
            Survivor s;
            s.src = src;
            s.row.assign(merged.tokens.row(row), merged.tokens.row(row) + c);
            s.size = merged.sizes[static_cast<size_t>(row)];
            s.loc = merged.loc_ids[static_cast<size_t>(row)];
            s.members = merged.members[static_cast<size_t>(row)];
            survivors.push_back(std::move(s));
        }
    }
    for (size_t hi = 0; hi < stack.held_src.size(); ++hi) {
        Survivor s;
        s.src = stack.held_src[hi];
        s.row.assign(stack.held_tokens.row(static_cast<int64_t>(hi)),
                     stack.held_tokens.row(static_cast<int64_t>(hi)) + c);
        s.size = stack.held_sizes[hi];
        s.loc = stack.held_loc_ids[hi];
        s.members = stack.held_members[hi];
        survivors.push_back(std::move(s));
    }
    std::sort(survivors.begin(), survivors.end(),
              [](const Survivor& a, const Survivor& b) { return a.src < b.src; });

    TokenState out;
    const int n = static_cast<int>(survivors.size());
    out.tokens = Tensor({n, c});
    for (int i = 0; i < n; ++i) {
        std::copy(survivors[static_cast<size_t>(i)].row.begin(), survivors[static_cast<size_t>(i)].row.end(),
                  out.tokens.row(i));
        out.sizes.push_back(survivors[static_cast<size_t>(i)].size);
        out.loc_ids.push_back(survivors[static_cast<size_t>(i)].loc);
        out.members.push_back(survivors[static_cast<size_t>(i)].members);
        if (survivors[static_cast<size_t>(i)].src == state.class_index) out.class_index = i;
        if (survivors[static_cast<size_t>(i)].src == state.dist_index) out.dist_index = i;
    }
    const int regular = n - out.num_special();
    out.grid = GridShape{(regular + state.grid->w - 1) / state.grid->w, state.grid->w};
    track_locations(out);
    return out;
}

Tensor random_matrix(int64_t n, int64_t c, uint64_t seed) {
    tomeforge::RngStream rng(seed);
    Tensor m({n, c});
    for (int64_t i = 0; i < m.numel(); ++i) m(i) = rng.next_gaussian();
    return m;
}

TokenState random_grid_state(int grid_side, int channels, uint64_t seed) {
    TokenState state;
    const int patches = grid_side * grid_side;
    const int n = patches + 1;
    state.tokens = random_matrix(n, channels, seed);
    state.sizes.assign(static_cast<size_t>(n), 1.0f);
    state.members.assign(static_cast<size_t>(n), {});
    state.loc_ids.assign(static_cast<size_t>(n), -1.0f);
    for (int i = 0; i < patches; ++i) {
        state.members[static_cast<size_t>(i + 1)] = {i};
        state.loc_ids[static_cast<size_t>(i + 1)] = static_cast<float>(i);
    }
    state.class_index = 0;
    state.grid = tomeforge::GridShape{grid_side, grid_side};
    return state;
}

bool states_bit_identical(const TokenState& a, const TokenState& b) {
    if (a.count() != b.count() || a.channels() != b.channels()) return false;
    if (a.class_index != b.class_index || a.dist_index != b.dist_index) return false;
    if (a.grid.has_value() != b.grid.has_value()) return false;
    if (a.grid && (a.grid->h != b.grid->h || a.grid->w != b.grid->w)) return false;
    if (a.sizes != b.sizes || a.loc_ids != b.loc_ids || a.members != b.members) return false;
    return a.tokens.storage() == b.tokens.storage();
}

}  // namespace oracles
