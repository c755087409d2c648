// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tomeforge/lgtm.hpp"
#include "tomeforge/metrics.hpp"
#include "tomeforge/vit.hpp"

namespace tomeforge {

/// Flag problems that should exit with the usage code (2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ModelConfig model;
    std::optional<std::string> weights_path;
    std::optional<uint64_t> synth_seed;

    int r = 0;
    std::string mode = "full";  // full | dfe | tome
    std::optional<int> s, w0, t;
    bool prop_attn = true;
    SimilarityMetric metric = SimilarityMetric::K;
    ReduceOp reduce = ReduceOp::Merge;
    bool no_merge_last_block = false;

    uint64_t seed = 0;
    int batch = 32;
    int runs = 50;
    int warmup = 5;
    bool bench = false;

    std::vector<std::string> inputs;
    std::optional<std::string> labels_path;
    std::string output_path;
    int scale = 16;
};

Weights resolve_weights(const RunConfig& config);
MergeSchedule schedule_for(const RunConfig& config, const std::string& mode, int r);
ForwardOptions forward_options(const RunConfig& config);

int cmd_run(const RunConfig& config);
int cmd_sweep(const RunConfig& config, const std::vector<int>& r_list,
              const std::vector<std::string>& modes);
int cmd_diagnose(const RunConfig& config);
int cmd_flops(const RunConfig& config);
int cmd_visualize(const RunConfig& config);

/// Parses argv and dispatches. Exit codes: 0 success, 1 runtime/IO, 2 usage.
int cli_main(int argc, const char* const* argv);

}  // namespace tomeforge
