// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/metrics.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "tomeforge/image.hpp"
#include "tomeforge/parallel.hpp"

namespace tomeforge {

std::optional<float> layer_cossim(const Tensor& tokens) {
    const int64_t n = tokens.dim(0);
    const int64_t c = tokens.dim(1);
    if (n < 2) return std::nullopt;

    std::vector<double> unit(static_cast<size_t>(n * c));
    for (int64_t i = 0; i < n; ++i) {
        const float* row = tokens.row(i);
        double sq = 0.0;
        for (int64_t j = 0; j < c; ++j) sq += static_cast<double>(row[j]) * row[j];
        const double norm = std::max(std::sqrt(sq), 1e-12);
        double* out = unit.data() + i * c;
        for (int64_t j = 0; j < c; ++j) out[j] = row[j] / norm;
    }
    // sum(G) - n over n(n-1), with G the Gram matrix of unit rows.
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* ui = unit.data() + i * c;
        for (int64_t j = 0; j < n; ++j) {
            const double* uj = unit.data() + j * c;
            double dot = 0.0;
            for (int64_t k = 0; k < c; ++k) dot += ui[k] * uj[k];
            sum += dot;
        }
    }
    const double value = (sum - static_cast<double>(n)) /
                         (static_cast<double>(n) * static_cast<double>(n - 1));
    return static_cast<float>(value);
}

uint64_t FlopReport::total_macs() const {
    uint64_t total = patch_embed + head;
    for (const LayerCost& l : layers) total += l.macs();
    return total;
}

FlopReport flop_count(const ModelConfig& config, const std::vector<int>& trace) {
    // depth 0 is a legal degenerate case here (embed + head only), so this
    // deliberately skips the full model validation.
    if (config.depth < 0 || config.embed_dim < 1 || config.patch_size < 1 ||
        config.image_size % config.patch_size != 0) {
        throw std::invalid_argument("flop_count: bad model geometry");
    }
    if (static_cast<int>(trace.size()) != config.depth + 1) {
        throw std::invalid_argument("flop_count: trace length " + std::to_string(trace.size()) +
                                    " != depth+1 = " + std::to_string(config.depth + 1));
    }
    const uint64_t c = static_cast<uint64_t>(config.embed_dim);
    const uint64_t hidden = static_cast<uint64_t>(config.mlp_hidden());
    const uint64_t p = static_cast<uint64_t>(config.patch_size);

    FlopReport report;
    report.trace = trace;
    report.patch_embed = static_cast<uint64_t>(config.num_patches()) * c * (3 * p * p);
    report.head = c * static_cast<uint64_t>(config.num_classes);

    for (int i = 0; i < config.depth; ++i) {
        const uint64_t n_attn = static_cast<uint64_t>(trace[static_cast<size_t>(i)]);
        const uint64_t n_mlp = static_cast<uint64_t>(trace[static_cast<size_t>(i) + 1]);
        FlopReport::LayerCost cost;
        cost.layer = i;
        cost.tokens_attn = static_cast<int>(n_attn);
        cost.tokens_mlp = static_cast<int>(n_mlp);
        cost.qkv = 3 * n_attn * c * c;
        cost.logits = n_attn * n_attn * c;
        cost.av = n_attn * n_attn * c;
        cost.proj = n_attn * c * c;
        cost.mlp = 2 * n_mlp * c * hidden;
        report.layers.push_back(cost);

        // Rough elementwise costs, excluded from the MAC headline:
        // softmax ~4 flops/logit per head, GELU ~10 flops/element, LN ~8.
        const uint64_t heads = static_cast<uint64_t>(config.heads);
        report.non_mac_flops += 4 * heads * n_attn * n_attn;
        report.non_mac_flops += 10 * n_mlp * hidden;
        report.non_mac_flops += 8 * (n_attn + n_mlp) * c;
    }
    report.non_mac_flops += 8 * static_cast<uint64_t>(trace.back()) * c;  // final norm
    return report;
}

BenchResult throughput_bench(const Weights& weights, const ModelConfig& config,
                             const MergeSchedule& schedule, const ForwardOptions& options,
                             int batch, int runs, int warmup, uint64_t image_seed) {
    if (runs < 1) throw std::invalid_argument("throughput_bench: runs must be >= 1");
    if (batch < 1) throw std::invalid_argument("throughput_bench: batch must be >= 1");

    std::vector<Tensor> images;
    images.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        images.push_back(synth_image(config.image_size, RngStream(image_seed).split(static_cast<uint64_t>(i))));
    }

    ForwardOptions fast = options;
    fast.collect_metrics = false;  // diagnostics are quadratic; keep timing honest

    BenchResult result;
    result.batch = batch;
    result.runs = runs;
    result.warmup = warmup;
    result.token_trace = forward(images[0], weights, config, schedule, fast).token_trace;

    auto run_batch = [&]() {
        parallel_for(batch, [&](int i) {
            const ForwardResult r = forward(images[static_cast<size_t>(i)], weights, config, schedule, fast);
            (void)r;
        });
    };

    for (int i = 0; i < warmup; ++i) run_batch();

    std::vector<double> rates;
    rates.reserve(static_cast<size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto start = std::chrono::steady_clock::now();
        run_batch();
        const auto stop = std::chrono::steady_clock::now();
        const double seconds = std::chrono::duration<double>(stop - start).count();
        rates.push_back(static_cast<double>(batch) / seconds);
    }

    double mean = 0.0;
    for (double r : rates) mean += r;
    mean /= static_cast<double>(runs);
    double var = 0.0;
    for (double r : rates) var += (r - mean) * (r - mean);
    var /= static_cast<double>(runs);  // population variance: runs=1 reports 0

    result.imgs_per_sec = mean;
    result.imgs_per_sec_std = std::sqrt(var);
    return result;
}

}  // namespace tomeforge
