// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "tomeforge/image.hpp"
#include "tomeforge/parallel.hpp"
#include "tomeforge/visualize.hpp"
#include "tomeforge/weights_io.hpp"

namespace tomeforge {

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string fmt_opt(const std::optional<float>& v) { return v ? fmt_g(*v) : std::string(); }

std::string trace_str(const std::vector<int>& trace) {
    std::ostringstream os;
    for (size_t i = 0; i < trace.size(); ++i) {
        if (i) os << ",";
        os << trace[static_cast<size_t>(i)];
    }
    return os.str();
}

struct LabeledInputs {
    std::vector<Tensor> images;
    std::vector<int> labels;  // -1 when unknown
    bool any_labels = false;
};

std::string basename_of(const std::string& path) {
    const size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

/// Labels file: one `<file-basename> <class-index>` pair per line.
std::map<std::string, int> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("labels: cannot open " + path);
    std::map<std::string, int> labels;
    std::string name;
    int cls;
    while (in >> name >> cls) labels[name] = cls;
    return labels;
}

LabeledInputs gather_inputs(const RunConfig& config) {
    LabeledInputs result;
    std::map<std::string, int> labels;
    if (config.labels_path) labels = read_labels(*config.labels_path);

    if (config.inputs.empty()) {
        result.images.push_back(synth_image(config.model.image_size, RngStream(config.seed).split(0x1ea9e)));
        result.labels.push_back(-1);
        return result;
    }
    for (const std::string& path : config.inputs) {
        result.images.push_back(load_image(path, config.model.image_size));
        auto it = labels.find(basename_of(path));
        if (it != labels.end()) {
            result.labels.push_back(it->second);
            result.any_labels = true;
        } else {
            result.labels.push_back(-1);
        }
    }
    return result;
}

std::ostream& open_output(std::ofstream& file, const std::string& path) {
    if (path.empty()) return std::cout;
    file.open(path);
    if (!file) throw std::runtime_error("cannot open " + path + " for writing");
    return file;
}

struct EvalOutcome {
    std::vector<int> trace;
    std::optional<double> top1;
    TokenState final_state;
    std::vector<LayerMetrics> layers;
};

EvalOutcome evaluate(const RunConfig& config, const Weights& weights, const MergeSchedule& schedule,
                     const LabeledInputs& inputs, bool collect_metrics) {
    ForwardOptions options = forward_options(config);
    options.collect_metrics = collect_metrics;

    EvalOutcome outcome;
    const int n = static_cast<int>(inputs.images.size());
    std::vector<int> predictions(static_cast<size_t>(n), -1);
    std::vector<ForwardResult> results(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
        results[static_cast<size_t>(i)] =
            forward(inputs.images[static_cast<size_t>(i)], weights, config.model, schedule, options);
        const Tensor& logits = results[static_cast<size_t>(i)].logits;
        int best = 0;
        for (int cls = 1; cls < logits.numel(); ++cls) {
            if (logits(cls) > logits(best)) best = cls;
        }
        predictions[static_cast<size_t>(i)] = best;
    });

    outcome.trace = results[0].token_trace;
    outcome.final_state = std::move(results[0].final_state);
    // Token and merge counts are schedule geometry, identical across examples;
    // similarity diagnostics are averaged over the batch.
    outcome.layers = results[0].layers;
    for (LayerMetrics& lm : outcome.layers) {
        auto merge_mean = [&](std::optional<float> LayerMetrics::* field) {
            double sum = 0.0;
            int present = 0;
            for (const ForwardResult& r : results) {
                const auto& value = r.layers[static_cast<size_t>(lm.layer)].*field;
                if (value) {
                    sum += *value;
                    ++present;
                }
            }
            lm.*field = present > 0 ? std::optional<float>(static_cast<float>(sum / present)) : std::nullopt;
        };
        merge_mean(&LayerMetrics::cossim_pre);
        merge_mean(&LayerMetrics::cossim_attn);
        merge_mean(&LayerMetrics::cossim_post);
        merge_mean(&LayerMetrics::merged_pair_sim);
    }
    if (inputs.any_labels) {
        int correct = 0, counted = 0;
        for (int i = 0; i < n; ++i) {
            if (inputs.labels[static_cast<size_t>(i)] < 0) continue;
            ++counted;
            if (predictions[static_cast<size_t>(i)] == inputs.labels[static_cast<size_t>(i)]) ++correct;
        }
        if (counted > 0) outcome.top1 = static_cast<double>(correct) / counted;
    }
    return outcome;
}

}  // namespace

Weights resolve_weights(const RunConfig& config) {
    if (config.weights_path.has_value() == config.synth_seed.has_value()) {
        throw UsageError("exactly one of --weights / --synth-seed is required");
    }
    if (config.weights_path) return load_weights(*config.weights_path, config.model);
    return synth_weights(config.model, RngStream(*config.synth_seed));
}

MergeSchedule schedule_for(const RunConfig& config, const std::string& mode, int r) {
    ScheduleOverrides overrides;
    overrides.s = config.s;
    overrides.w0 = config.w0;
    overrides.t = config.t;
    if (mode == "full") {
        // defaults
    } else if (mode == "dfe") {
        overrides.dfe_only = true;
    } else if (mode == "tome") {
        overrides.dfe_only = true;
        if (!overrides.s) overrides.s = 0;
    } else {
        throw UsageError("unknown mode '" + mode + "' (expected full, dfe, or tome)");
    }
    MergeSchedule schedule = build_schedule(config.model, r, overrides);
    if (config.no_merge_last_block && !schedule.plans.empty()) {
        schedule.plans.back() = LayerPlan::skip();
    }
    return schedule;
}

ForwardOptions forward_options(const RunConfig& config) {
    ForwardOptions options;
    options.prop_attn = config.prop_attn;
    options.metric = config.metric;
    options.reduce = config.reduce;
    options.seed = config.seed;
    return options;
}

int cmd_run(const RunConfig& config) {
    const Weights weights = resolve_weights(config);
    const MergeSchedule schedule = schedule_for(config, config.mode, config.r);
    const LabeledInputs inputs = gather_inputs(config);

    const EvalOutcome outcome = evaluate(config, weights, schedule, inputs, false);
    const FlopReport flops = flop_count(config.model, outcome.trace);

    std::cout << "mode=" << config.mode << " r=" << config.r << " s=" << schedule.s << " w0=" << schedule.w0
              << " t=" << schedule.t << "\n";
    std::cout << "token trace: " << trace_str(outcome.trace) << "\n";
    std::cout << "final tokens: " << outcome.trace.back() << "\n";
    std::cout << "gmacs: " << fmt_g(flops.gmacs()) << "\n";
    std::cout << "gflops: " << fmt_g(flops.gflops()) << "\n";
    if (outcome.top1) std::cout << "top1: " << fmt_g(*outcome.top1) << "\n";
    if (config.bench) {
        const BenchResult bench = throughput_bench(weights, config.model, schedule,
                                                   forward_options(config), config.batch, config.runs,
                                                   config.warmup, config.seed);
        std::cout << "imgs/sec: " << fmt_g(bench.imgs_per_sec) << " +- " << fmt_g(bench.imgs_per_sec_std)
                  << "\n";
    }
    return 0;
}

int cmd_sweep(const RunConfig& config, const std::vector<int>& r_list,
              const std::vector<std::string>& modes) {
    if (r_list.empty()) throw UsageError("sweep: --r-list must not be empty");
    if (modes.empty()) throw UsageError("sweep: --modes must not be empty");
    const Weights weights = resolve_weights(config);
    const LabeledInputs inputs = gather_inputs(config);

    std::ofstream file;
    std::ostream& out = open_output(file, config.output_path);
    out << "mode,r,s,w0,t,layers,final_tokens,gmacs,gflops,imgs_per_sec,imgs_per_sec_std,top1\n";
    for (const std::string& mode : modes) {
        for (int r : r_list) {
            const MergeSchedule schedule = schedule_for(config, mode, r);
            const EvalOutcome outcome = evaluate(config, weights, schedule, inputs, false);
            const FlopReport flops = flop_count(config.model, outcome.trace);
            std::string ips, ips_std;
            if (config.bench) {
                const BenchResult bench = throughput_bench(weights, config.model, schedule,
                                                           forward_options(config), config.batch,
                                                           config.runs, config.warmup, config.seed);
                ips = fmt_g(bench.imgs_per_sec);
                ips_std = fmt_g(bench.imgs_per_sec_std);
            }
            out << mode << "," << r << "," << schedule.s << "," << schedule.w0 << "," << schedule.t << ","
                << config.model.depth << "," << outcome.trace.back() << "," << fmt_g(flops.gmacs()) << ","
                << fmt_g(flops.gflops()) << "," << ips << "," << ips_std << ","
                << (outcome.top1 ? fmt_g(*outcome.top1) : std::string()) << "\n";
        }
    }
    return 0;
}

int cmd_diagnose(const RunConfig& config) {
    const Weights weights = resolve_weights(config);
    const MergeSchedule schedule = schedule_for(config, config.mode, config.r);
    const LabeledInputs inputs = gather_inputs(config);
    const EvalOutcome outcome = evaluate(config, weights, schedule, inputs, true);

    std::ofstream file;
    std::ostream& out = open_output(file, config.output_path);
    out << "layer,tokens,cossim_pre,cossim_attn,cossim_post,merged_pair_sim,merges\n";
    for (const LayerMetrics& lm : outcome.layers) {
        out << lm.layer << "," << lm.tokens << "," << fmt_opt(lm.cossim_pre) << ","
            << fmt_opt(lm.cossim_attn) << "," << fmt_opt(lm.cossim_post) << ","
            << fmt_opt(lm.merged_pair_sim) << "," << lm.merges << "\n";
    }
    return 0;
}

int cmd_flops(const RunConfig& config) {
    const MergeSchedule schedule = schedule_for(config, config.mode, config.r);
    const std::vector<int> trace = predict_token_trace(config.model, schedule);
    const FlopReport report = flop_count(config.model, trace);

    std::cout << "mode=" << config.mode << " r=" << config.r << " s=" << schedule.s << " w0=" << schedule.w0
              << " t=" << schedule.t << "\n";
    std::cout << "predicted trace: " << trace_str(trace) << "\n";
    std::cout << "patch_embed macs: " << report.patch_embed << "\n";
    for (const FlopReport::LayerCost& l : report.layers) {
        std::cout << "layer " << l.layer << ": tokens " << l.tokens_attn << "->" << l.tokens_mlp
                  << " qkv=" << l.qkv << " logits=" << l.logits << " av=" << l.av << " proj=" << l.proj
                  << " mlp=" << l.mlp << "\n";
    }
    std::cout << "head macs: " << report.head << "\n";
    std::cout << "total gmacs: " << fmt_g(report.gmacs()) << "\n";
    std::cout << "total gflops: " << fmt_g(report.gflops()) << "\n";
    std::cout << "non-mac flops: " << report.non_mac_flops << "\n";
    return 0;
}

int cmd_visualize(const RunConfig& config) {
    if (config.output_path.empty()) throw UsageError("visualize: --out is required");
    const Weights weights = resolve_weights(config);
    const MergeSchedule schedule = schedule_for(config, config.mode, config.r);
    const LabeledInputs inputs = gather_inputs(config);
    const EvalOutcome outcome = evaluate(config, weights, schedule, inputs, false);

    const Pixmap pix = render_merge_map(outcome.final_state, config.model.grid_side(), config.scale);
    write_ppm(config.output_path, pix);
    std::cout << "wrote " << config.output_path << " (" << pix.width << "x" << pix.height << ", "
              << outcome.trace.back() << " final tokens)\n";
    return 0;
}

namespace {

void add_common_options(CLI::App* cmd, RunConfig& config, std::string& preset, std::string& metric_name_str,
                        std::string& reduce_name, bool& dfe_only_flag, bool& no_lgtm_flag,
                        bool& no_prop_attn_flag) {
    cmd->add_option("--preset", preset, "model preset: vit-s, vit-b, vit-l, deit-s");
    cmd->add_option("--depth", config.model.depth, "transformer depth");
    cmd->add_option("--dim", config.model.embed_dim, "embedding channels");
    cmd->add_option("--heads", config.model.heads, "attention heads");
    cmd->add_option("--patch", config.model.patch_size, "patch size in px");
    cmd->add_option("--res", config.model.image_size, "input resolution in px");
    cmd->add_option("--classes", config.model.num_classes, "classifier outputs");
    cmd->add_option("--mlp-ratio", config.model.mlp_ratio, "MLP expansion ratio");

    cmd->add_option("--weights", [&config](const std::vector<std::string>& v) {
        config.weights_path = v.back();
        return true;
    }, "VTW1 weights file");
    cmd->add_option("--synth-seed", [&config](const std::vector<std::string>& v) {
        config.synth_seed = std::stoull(v.back());
        return true;
    }, "seed for synthetic weights");

    cmd->add_option("--r", config.r, "tokens merged per reduction layer");
    cmd->add_option("--mode", config.mode, "schedule mode: full, dfe, tome");
    cmd->add_option("--s", [&config](const std::vector<std::string>& v) {
        config.s = std::stoi(v.back());
        return true;
    }, "override skip depth");
    cmd->add_option("--w0", [&config](const std::vector<std::string>& v) {
        config.w0 = std::stoi(v.back());
        return true;
    }, "override initial window");
    cmd->add_option("--t", [&config](const std::vector<std::string>& v) {
        config.t = std::stoi(v.back());
        return true;
    }, "override transition length");
    cmd->add_flag("--dfe-only", dfe_only_flag, "skip phase then global merging (alias of --mode dfe)");
    cmd->add_flag("--no-lgtm", no_lgtm_flag, "disable local windows (alias of --mode dfe)");
    cmd->add_flag("--no-prop-attn", no_prop_attn_flag, "disable proportional attention");
    cmd->add_flag("--no-merge-last-block", config.no_merge_last_block, "keep the final block dense");
    cmd->add_option("--metric", metric_name_str, "similarity feature: k, q, v, xpre, xattn, random");
    cmd->add_option("--reduce", reduce_name, "reduction op: merge or drop");

    cmd->add_option("--seed", config.seed, "run seed (random metric, synthetic inputs)");
    cmd->add_option("--input", config.inputs, "input image (.ppm or raw .f32); repeatable");
    cmd->add_option("--labels", [&config](const std::vector<std::string>& v) {
        config.labels_path = v.back();
        return true;
    }, "labels file: `<basename> <class>` per line");
    cmd->add_option("-o,--out", config.output_path, "output path (CSV or image)");
    cmd->add_option("--batch", config.batch, "bench batch size");
    cmd->add_option("--runs", config.runs, "bench timed runs");
    cmd->add_option("--warmup", config.warmup, "bench warmup runs");
    cmd->add_flag("--bench", config.bench, "measure throughput");
    cmd->add_option("--scale", config.scale, "visualization px per patch");
}

void finalize_config(RunConfig& config, const std::string& preset, const std::string& metric_name_str,
                     const std::string& reduce_name, bool dfe_only_flag, bool no_lgtm_flag,
                     bool no_prop_attn_flag) {
    if (!preset.empty()) {
        const ModelConfig base = ModelConfig::preset(preset);
        // Preset sets the architecture; explicit --res/--patch/--classes stick.
        ModelConfig merged = base;
        merged.image_size = config.model.image_size;
        merged.patch_size = config.model.patch_size;
        merged.num_classes = config.model.num_classes;
        merged.mlp_ratio = config.model.mlp_ratio;
        config.model = merged;
    }
    if (dfe_only_flag || no_lgtm_flag) config.mode = "dfe";
    config.prop_attn = !no_prop_attn_flag;
    config.metric = metric_from_name(metric_name_str);
    if (reduce_name == "merge") {
        config.reduce = ReduceOp::Merge;
    } else if (reduce_name == "drop") {
        config.reduce = ReduceOp::Drop;
    } else {
        throw UsageError("unknown --reduce '" + reduce_name + "'");
    }
}

std::vector<int> parse_r_list(const std::string& csv) {
    std::vector<int> values;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(std::stoi(item));
    }
    return values;
}

std::vector<std::string> parse_modes(const std::string& csv) {
    std::vector<std::string> values;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(item);
    }
    return values;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"tomeforge: training-free ViT token-reduction engine"};
    app.require_subcommand(1);

    RunConfig config;
    std::string preset, metric_str = "k", reduce_str = "merge";
    bool dfe_only_flag = false, no_lgtm_flag = false, no_prop_attn_flag = false;
    std::string r_list_csv, modes_csv = "tome,dfe,full";

    CLI::App* run = app.add_subcommand("run", "single forward pass with cost report");
    CLI::App* sweep = app.add_subcommand("sweep", "CSV over (mode, r) combinations");
    CLI::App* diagnose = app.add_subcommand("diagnose", "per-layer CosSim / merge diagnostics CSV");
    CLI::App* flops = app.add_subcommand("flops", "analytic cost breakdown, no forward pass");
    CLI::App* visualize = app.add_subcommand("visualize", "merge-map pixmap");
    for (CLI::App* cmd : {run, sweep, diagnose, flops, visualize}) {
        add_common_options(cmd, config, preset, metric_str, reduce_str, dfe_only_flag, no_lgtm_flag,
                           no_prop_attn_flag);
    }
    sweep->add_option("--r-list", r_list_csv, "comma-separated r values")->required();
    sweep->add_option("--modes", modes_csv, "comma-separated subset of tome,dfe,full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            app.exit(e);
            return 0;
        }
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        finalize_config(config, preset, metric_str, reduce_str, dfe_only_flag, no_lgtm_flag,
                        no_prop_attn_flag);
        config.model.validate();
        if (app.got_subcommand(run)) return cmd_run(config);
        if (app.got_subcommand(sweep)) return cmd_sweep(config, parse_r_list(r_list_csv), parse_modes(modes_csv));
        if (app.got_subcommand(diagnose)) return cmd_diagnose(config);
        if (app.got_subcommand(flops)) return cmd_flops(config);
        if (app.got_subcommand(visualize)) return cmd_visualize(config);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace tomeforge
