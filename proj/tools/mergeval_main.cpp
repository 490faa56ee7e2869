// mergeval: merge checkpoints with their fine-tunes and measure how prompt
// robustness moves with the merging coefficient.
//
// Subcommands: inspect, merge, sweep, run, score, report. Every subcommand
// accepts --config (one TOML-style file, one section per subcommand); command
// line flags override config values. Commands that write outputs persist the
// fully resolved configuration next to them as resolved_config.toml.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/harness.hpp"
#include "mergeval/io.hpp"
#include "mergeval/merge.hpp"
#include "mergeval/prompts.hpp"
#include "mergeval/report.hpp"
#include "mergeval/safetensors.hpp"
#include "mergeval/scoring.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mergeval;

namespace {

std::string shape_str(const std::vector<uint64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void persist_resolved_config(CLI::App& app, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    write_file(dir / "resolved_config.toml", app.config_to_str(true, true));
}

std::optional<tensorstore::DType> parse_dtype_flag(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return tensorstore::parse_dtype(s);
}

// Labels file: either a JSON array of class names (applies to every kind),
// an object {"classes": [...]}, or an object mapping task-kind names to
// class arrays.
std::vector<std::string> load_label_classes(const fs::path& path, scoring::TaskKind kind) {
    const auto bytes = read_file(path);
    const json doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (doc.is_discarded()) throw ManifestError(path.string() + ": labels file is not valid JSON");
    const json* arr = nullptr;
    if (doc.is_array()) {
        arr = &doc;
    } else if (doc.is_object()) {
        const std::string kind_name(scoring::task_kind_name(kind));
        if (doc.contains(kind_name)) arr = &doc[kind_name];
        else if (doc.contains("classes")) arr = &doc["classes"];
    }
    if (!arr || !arr->is_array()) {
        throw ManifestError(path.string() + ": no class list for task kind '" +
                            std::string(scoring::task_kind_name(kind)) + "'");
    }
    std::vector<std::string> classes;
    for (const auto& c : *arr) {
        if (!c.is_string()) throw ManifestError(path.string() + ": class names must be strings");
        classes.push_back(c.get<std::string>());
    }
    return classes;
}

scoring::LabelSet labels_for(const fs::path& path, scoring::TaskKind kind) {
    scoring::LabelSet labels;
    labels.kind = kind;
    labels.classes = load_label_classes(path, kind);
    labels.validate();
    return labels;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
    std::vector<std::string> paths;
    bool allow_gaps = false;
};

void print_index(const fs::path& path, const tensorstore::CheckpointIndex& index) {
    std::printf("checkpoint: %s\n", path.c_str());
    std::printf("header bytes: %llu  payload bytes: %llu\n",
                static_cast<unsigned long long>(index.header_len),
                static_cast<unsigned long long>(index.payload_len));
    if (!index.metadata.empty()) {
        std::printf("metadata:");
        for (const auto& [k, v] : index.metadata) std::printf(" %s=%s", k.c_str(), v.c_str());
        std::printf("\n");
    }
    std::printf("%-48s %-5s %-16s %12s\n", "name", "dtype", "shape", "bytes");
    uint64_t total_elems = 0;
    for (const auto& e : index.entries) {
        std::printf("%-48s %-5s %-16s %12llu\n", e.name.c_str(),
                    std::string(tensorstore::dtype_name(e.dtype)).c_str(),
                    shape_str(e.shape).c_str(), static_cast<unsigned long long>(e.num_bytes()));
        total_elems += e.num_elements();
    }
    std::printf("totals: %zu tensors, %llu elements, %llu payload bytes\n", index.entries.size(),
                static_cast<unsigned long long>(total_elems),
                static_cast<unsigned long long>(index.payload_len));
}

int cmd_inspect(const InspectArgs& args) {
    tensorstore::ParseOptions opts;
    opts.allow_gaps = args.allow_gaps;
    const auto first = tensorstore::CheckpointFile::open(args.paths[0], opts);
    if (args.paths.size() == 1) {
        print_index(args.paths[0], first.index());
        return 0;
    }
    const auto second = tensorstore::CheckpointFile::open(args.paths[1], opts);
    std::set<std::string> a_names, b_names;
    for (const auto& e : first.index().entries) a_names.insert(e.name);
    for (const auto& e : second.index().entries) b_names.insert(e.name);
    bool differs = false;
    for (const auto& n : a_names) {
        if (!b_names.count(n)) {
            std::printf("only in %s: %s\n", args.paths[0].c_str(), n.c_str());
            differs = true;
        }
    }
    for (const auto& n : b_names) {
        if (!a_names.count(n)) {
            std::printf("only in %s: %s\n", args.paths[1].c_str(), n.c_str());
            differs = true;
        }
    }
    for (const auto& n : a_names) {
        if (!b_names.count(n)) continue;
        const auto& ea = first.index().at(n);
        const auto& eb = second.index().at(n);
        if (ea.shape != eb.shape || ea.dtype != eb.dtype) {
            std::printf("mismatch %s: %s%s vs %s%s\n", n.c_str(),
                        std::string(tensorstore::dtype_name(ea.dtype)).c_str(),
                        shape_str(ea.shape).c_str(),
                        std::string(tensorstore::dtype_name(eb.dtype)).c_str(),
                        shape_str(eb.shape).c_str());
            differs = true;
        }
    }
    if (!differs) std::printf("checkpoints agree on names, dtypes and shapes\n");
    return 0;
}

// ---------------------------------------------------------------- merge/sweep

struct MergeArgs {
    std::string base;
    std::string ft;
    std::string adapter;
    std::string mode = "interp";
    std::vector<double> alphas;
    std::string out;
    std::string dtype;
    std::string naming = "merged-a{alpha}.safetensors";
    std::string strip_prefix = "base_model.model.";
    double lora_alpha = 0.0;  // 0 = default to rank
    bool overwrite = false;
    bool extrapolate = false;
    bool allow_gaps = false;
    int jobs = 1;
};

merge::LoraAdapter load_adapter(const tensorstore::CheckpointIndex& base_index,
                                const MergeArgs& args) {
    tensorstore::ParseOptions popts;
    popts.allow_gaps = args.allow_gaps;
    const auto adapter_file = tensorstore::CheckpointFile::open(args.adapter, popts);
    merge::NameMapRule rule;
    rule.strip_prefix = args.strip_prefix;
    if (args.lora_alpha != 0.0) rule.scale_numerator = args.lora_alpha;
    return merge::match_names(base_index, adapter_file, rule);
}

int cmd_merge_or_sweep(CLI::App& app, const MergeArgs& args, bool is_sweep) {
    if (args.alphas.empty()) throw ConfigError("at least one alpha is required");
    tensorstore::ParseOptions popts;
    popts.allow_gaps = args.allow_gaps;
    const auto base = tensorstore::CheckpointFile::open(args.base, popts);

    merge::MergeSpec spec;
    spec.mode = args.mode == "lora" ? merge::MergeMode::LoraRescale : merge::MergeMode::Interpolate;
    spec.alphas = args.alphas;
    spec.output_dtype = parse_dtype_flag(args.dtype);
    spec.output_naming = args.naming;
    spec.overwrite = args.overwrite;
    spec.extrapolate = args.extrapolate;
    spec.jobs = args.jobs;

    std::optional<tensorstore::CheckpointFile> ft;
    std::optional<merge::LoraAdapter> adapter;
    if (spec.mode == merge::MergeMode::Interpolate) {
        if (args.ft.empty()) throw ConfigError("--mode interp needs --ft");
        ft = tensorstore::CheckpointFile::open(args.ft, popts);
    } else {
        if (args.adapter.empty()) throw ConfigError("--mode lora needs --adapter");
        adapter = load_adapter(base.index(), args);
    }

    if (is_sweep) {
        const fs::path out_dir = args.out.empty() ? fs::path("sweep-out") : fs::path(args.out);
        const auto entries = merge::sweep(base, ft ? &*ft : nullptr, adapter ? &*adapter : nullptr,
                                          spec, out_dir);
        persist_resolved_config(app, out_dir);
        for (const auto& e : entries) {
            std::printf("alpha=%s  %s  sha256=%s\n", fmt_num(e.alpha).c_str(), e.path.c_str(),
                        e.sha256.c_str());
        }
        std::printf("manifest: %s\n", (out_dir / "manifest.jsonl").c_str());
        return 0;
    }

    if (args.out.empty()) throw ConfigError("--out is required");
    if (args.alphas.size() != 1) throw ConfigError("merge takes exactly one --alpha; use sweep for lists");
    const double alpha = args.alphas[0];
    merge::MergeOptions mopts;
    mopts.output_dtype = spec.output_dtype;
    mopts.extrapolate = spec.extrapolate;
    mopts.jobs = spec.jobs;
    const auto tensors = spec.mode == merge::MergeMode::Interpolate
                             ? merge::interpolate(base, *ft, alpha, mopts)
                             : merge::apply_lora(base, *adapter, alpha, mopts);
    const fs::path out_path(args.out);
    if (fs::exists(out_path) && !args.overwrite) {
        throw OutputExists("refusing to overwrite " + out_path.string() + " (use --overwrite)");
    }
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    tensorstore::write_checkpoint(tensors, base.index().metadata, out_path);
    write_file(out_path.string() + ".config.toml", app.config_to_str(true, true));
    std::printf("alpha=%s  %s  sha256=%s\n", fmt_num(alpha).c_str(), out_path.c_str(),
                file_sha256(out_path).c_str());
    return 0;
}

// ---------------------------------------------------------------- run

struct RunArgs {
    std::string manifest;
    std::string labels;
    std::string kind = "CLOSED_SET";
    std::vector<double> alphas{1.0};
    std::string endpoint;
    std::string endpoint_path = "/v1/chat/completions";
    std::string model = "merged";
    std::string auth_token;
    std::string out = "runs";
    std::string pool;
    int k = 0;
    uint64_t seed = 0;
    int concurrency = 1;
    int max_retries = 3;
    int max_tokens = 64;
    double temperature = 0.0;
    int timeout_s = 30;
    bool shuffle_labels = false;
};

int cmd_run(CLI::App& app, const RunArgs& args) {
    if (args.endpoint.empty()) throw ConfigError("--endpoint is required (or MERGEVAL_ENDPOINT)");
    const auto manifest = harness::load_manifest(args.manifest);
    const auto kind = prompts::parse_prompt_kind(args.kind);
    auto labels = labels_for(args.labels, prompts::scoring_kind(kind));
    if (args.shuffle_labels) {
        labels.classes = prompts::permute_examples(labels.classes, "species_list", args.seed);
    }

    std::optional<harness::FewShotSpec> fewshot;
    if (kind == prompts::PromptKind::IclK) {
        harness::FewShotSpec spec;
        spec.k = args.k;
        spec.master_seed = args.seed;
        if (!args.pool.empty()) spec.pool = harness::load_pool(args.pool);
        if (spec.k > 0 && spec.pool.empty()) {
            throw ConfigError("ICL_K with k>0 needs --pool");
        }
        fewshot = std::move(spec);
    }

    harness::EndpointConfig endpoint;
    endpoint.base_url = args.endpoint;
    endpoint.path = args.endpoint_path;
    endpoint.model = args.model;
    endpoint.auth_token = args.auth_token;
    endpoint.temperature = args.temperature;
    endpoint.max_tokens = args.max_tokens;
    endpoint.max_retries = args.max_retries;
    endpoint.timeout_s = args.timeout_s;

    const fs::path out_dir(args.out);
    fs::create_directories(out_dir);
    persist_resolved_config(app, out_dir);

    int failed = 0;
    for (const double alpha : args.alphas) {
        harness::RunOptions opts;
        opts.alpha = alpha;
        opts.kind = kind;
        opts.concurrency = args.concurrency;
        opts.fewshot = fewshot;
        const auto run_path = out_dir / ("run-a" + fmt_num(alpha) + ".jsonl");
        const auto stats = harness::run(manifest, prompts::builtin_template(kind), labels, endpoint,
                                        opts, run_path);
        std::printf("alpha=%s  %s  requested=%d ok=%d failed=%d skipped=%d\n", fmt_num(alpha).c_str(),
                    run_path.c_str(), stats.requested, stats.succeeded, stats.failed, stats.skipped);
        failed += stats.failed;
    }
    if (failed > 0) {
        std::fprintf(stderr, "mergeval: %d sample(s) failed after retries\n", failed);
        return static_cast<int>(ErrorFamily::Endpoint);
    }
    return 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
    std::vector<std::string> inputs;
    std::vector<std::string> runs;
    std::string manifest;
    std::string kind;
    std::string labels;
    std::string out = "score-out";
    int threshold = 5;
    std::vector<std::string> abstention;
};

std::vector<fs::path> expand_run_inputs(const std::vector<std::string>& runs) {
    std::vector<fs::path> files;
    for (const auto& r : runs) {
        const fs::path p(r);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& entry : fs::directory_iterator(p)) {
                if (entry.path().extension() == ".jsonl" &&
                    entry.path().filename().string().rfind("run-", 0) == 0) {
                    found.push_back(entry.path());
                }
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.push_back(p);
        }
    }
    if (files.empty()) throw ConfigError("no run files found");
    return files;
}

int cmd_score(CLI::App& app, const ScoreArgs& args) {
    std::vector<scoring::ScoreRow> rows;
    if (!args.inputs.empty()) {
        for (const auto& input : args.inputs) {
            const auto batch = harness::load_score_rows(input);
            rows.insert(rows.end(), batch.begin(), batch.end());
        }
    } else if (!args.runs.empty()) {
        if (args.manifest.empty() || args.kind.empty()) {
            throw ConfigError("--run needs --manifest and --kind to join ground truth");
        }
        const auto manifest = harness::load_manifest(args.manifest);
        const auto kind = scoring::parse_task_kind(args.kind);
        for (const auto& run_path : expand_run_inputs(args.runs)) {
            const auto batch = harness::export_for_scoring(run_path, manifest, kind);
            rows.insert(rows.end(), batch.begin(), batch.end());
        }
    } else {
        throw ConfigError("score needs --input rows or --run files");
    }
    if (rows.empty()) throw EmptySummary("no scoring rows");

    scoring::JudgeOptions jopts;
    jopts.threshold = args.threshold;
    if (!args.abstention.empty()) jopts.abstention_patterns = args.abstention;

    // group rows by (kind, dataset, alpha)
    std::map<std::string, std::vector<const scoring::ScoreRow*>> groups;
    for (const auto& r : rows) {
        groups[std::string(scoring::task_kind_name(r.kind)) + "\x1f" + r.dataset + "\x1f" +
               fmt_num(r.alpha)]
            .push_back(&r);
    }

    const fs::path out_dir(args.out);
    fs::create_directories(out_dir);
    persist_resolved_config(app, out_dir);

    std::string judgments;
    std::vector<report::SummaryRow> summary;
    for (const auto& [key, group] : groups) {
        const auto kind = group.front()->kind;
        const auto labels = labels_for(args.labels, kind);
        std::vector<scoring::ScoredOutput> scored;
        for (const scoring::ScoreRow* r : group) {
            auto s = scoring::judge(r->sample_id, r->output_text, r->truth, labels, jopts);
            json j = {
                {"sample_id", s.sample_id},
                {"alpha", r->alpha},
                {"task_kind", std::string(scoring::task_kind_name(kind))},
                {"dataset", r->dataset},
                {"truth", s.truth},
                {"category", std::string(scoring::category_name(s.category))},
                {"tie_broken", s.tie_broken},
            };
            j["matched_class"] = s.matched_class ? json(*s.matched_class) : json(nullptr);
            j["distance"] = s.distance ? json(*s.distance) : json(nullptr);
            judgments += j.dump();
            judgments += '\n';
            scored.push_back(std::move(s));
        }
        const auto metrics = scoring::aggregate(scored, labels, group.front()->alpha);
        report::SummaryRow row;
        row.dataset = group.front()->dataset;
        row.task_kind = std::string(scoring::task_kind_name(kind));
        row.alpha = metrics.alpha;
        row.n = metrics.n;
        row.accuracy = metrics.accuracy;
        row.macro_f1 = metrics.macro_f1;
        row.category_rates = metrics.category_rates;
        row.per_class = metrics.per_class;
        summary.push_back(std::move(row));
    }

    write_file(out_dir / "judgments.jsonl", judgments);
    report::write_metrics_json(summary, out_dir / "metrics.json");
    report::write_metrics_csv(summary, out_dir / "metrics.csv");
    std::printf("scored %zu row(s) in %zu group(s); wrote %s\n", rows.size(), groups.size(),
                (out_dir / "metrics.json").c_str());
    for (const auto& row : summary) {
        std::printf("alpha=%s kind=%s dataset=%s n=%d accuracy=%s macro_f1=%s\n",
                    fmt_num(row.alpha).c_str(), row.task_kind.c_str(),
                    row.dataset.empty() ? "-" : row.dataset.c_str(), row.n,
                    fmt_num(row.accuracy).c_str(), fmt_num(row.macro_f1).c_str());
    }
    return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
    std::vector<std::string> metrics;
    std::string out = "report-out";
    std::vector<double> compare;
};

int cmd_report(CLI::App& app, const ReportArgs& args) {
    std::vector<report::SummaryRow> rows;
    for (const auto& m : args.metrics) {
        const auto batch = report::load_metrics_json(m);
        rows.insert(rows.end(), batch.begin(), batch.end());
    }
    report::ReportOptions opts;
    if (!args.compare.empty()) {
        if (args.compare.size() != 2) throw ConfigError("--compare takes exactly two alphas");
        opts.compare_alphas = {{args.compare[0], args.compare[1]}};
    }
    const fs::path out_dir(args.out);
    const auto files = report::emit_report(rows, out_dir, opts);
    persist_resolved_config(app, out_dir);
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"checkpoint merging and prompt-robustness evaluation"};
    app.require_subcommand(1);
    app.fallthrough();  // lets `mergeval <cmd> --config f` reach the app-level option
    app.set_config("--config", "", "TOML-style config file with one section per subcommand");
    app.allow_config_extras(true);

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "dump or diff checkpoint headers");
    inspect->configurable(true);
    inspect->add_option("paths", inspect_args.paths, "one checkpoint, or two to diff")
        ->required()
        ->expected(1, 2);
    inspect->add_flag("--allow-gaps", inspect_args.allow_gaps,
                      "tolerate unused payload bytes in third-party files");

    MergeArgs merge_args;
    auto* merge_cmd = app.add_subcommand("merge", "write one merged checkpoint");
    MergeArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "write one merged checkpoint per alpha");
    for (auto [cmd, args] : {std::pair{merge_cmd, &merge_args}, std::pair{sweep_cmd, &sweep_args}}) {
        cmd->configurable(true);
        cmd->add_option("--base", args->base, "base checkpoint")->required();
        cmd->add_option("--ft", args->ft, "fine-tuned checkpoint (interp mode)");
        cmd->add_option("--adapter", args->adapter, "low-rank adapter checkpoint (lora mode)");
        cmd->add_option("--mode", args->mode, "merge mode")
            ->check(CLI::IsMember({"interp", "lora"}))
            ->capture_default_str();
        cmd->add_option("--alpha,--alphas", args->alphas, "merging coefficient(s)")
            ->delimiter(',');
        cmd->add_option("--dtype", args->dtype, "output dtype (default: per-tensor base dtype)")
            ->check(CLI::IsMember({"F32", "F16", "BF16"}));
        cmd->add_option("--lora-alpha", args->lora_alpha,
                        "adapter scale numerator (default: rank, i.e. scale 1)");
        cmd->add_option("--strip-prefix", args->strip_prefix, "adapter name prefix to strip")
            ->capture_default_str();
        cmd->add_flag("--overwrite", args->overwrite, "replace existing outputs");
        cmd->add_flag("--extrapolate", args->extrapolate, "allow alpha > 1 in lora mode");
        cmd->add_flag("--allow-gaps", args->allow_gaps, "tolerate gaps in input checkpoints");
        cmd->add_option("--jobs", args->jobs, "tensor-level worker threads")->capture_default_str();
    }
    merge_cmd->add_option("--out", merge_args.out, "output checkpoint path");
    sweep_cmd->add_option("--out", sweep_args.out, "output directory");
    sweep_cmd->add_option("--naming", sweep_args.naming, "output file pattern with {alpha}")
        ->capture_default_str();

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "drive an inference endpoint over a manifest");
    run_cmd->configurable(true);
    run_cmd->add_option("--manifest", run_args.manifest, "line-delimited JSON of samples")->required();
    run_cmd->add_option("--labels", run_args.labels, "labels JSON file")->required();
    run_cmd->add_option("--kind", run_args.kind, "prompt kind")
        ->check(CLI::IsMember({"COMMON", "SCIENTIFIC", "COMBINED", "CLOSED_SET", "ZF_ORIGINAL",
                               "ZF_REVERSED", "ZF_NOCLASS", "ICL_K"}))
        ->capture_default_str();
    run_cmd->add_option("--alpha,--alphas", run_args.alphas, "alpha value(s), one run file each")
        ->delimiter(',')
        ->capture_default_str();
    run_cmd->add_option("--endpoint", run_args.endpoint, "endpoint base URL")
        ->envname("MERGEVAL_ENDPOINT");
    run_cmd->add_option("--endpoint-path", run_args.endpoint_path, "completions path")
        ->capture_default_str();
    run_cmd->add_option("--model", run_args.model, "model name sent to the endpoint")
        ->capture_default_str();
    run_cmd->add_option("--auth-token", run_args.auth_token, "bearer token")
        ->envname("MERGEVAL_AUTH_TOKEN");
    run_cmd->add_option("--out", run_args.out, "output directory for run files")
        ->capture_default_str();
    run_cmd->add_option("--k", run_args.k, "few-shot examples per class (ICL_K)")
        ->capture_default_str();
    run_cmd->add_option("--pool", run_args.pool, "few-shot pool (line-delimited JSON)");
    run_cmd->add_option("--seed", run_args.seed, "master seed for example permutations")
        ->capture_default_str();
    run_cmd->add_option("--concurrency", run_args.concurrency, "max in-flight requests")
        ->capture_default_str();
    run_cmd->add_option("--max-retries", run_args.max_retries, "retries per request")
        ->capture_default_str();
    run_cmd->add_option("--max-tokens", run_args.max_tokens, "generation cap")->capture_default_str();
    run_cmd->add_option("--temperature", run_args.temperature, "sampling temperature")
        ->capture_default_str();
    run_cmd->add_option("--timeout", run_args.timeout_s, "request timeout seconds")
        ->capture_default_str();
    run_cmd->add_flag("--shuffle-labels", run_args.shuffle_labels,
                      "seed-shuffle the species list instead of manifest order");

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "judge outputs and aggregate metrics");
    score_cmd->configurable(true);
    score_cmd->add_option("--input", score_args.inputs, "scoring-input JSONL file(s)");
    score_cmd->add_option("--run", score_args.runs, "run file(s) or directory to score");
    score_cmd->add_option("--manifest", score_args.manifest, "manifest for ground-truth join");
    score_cmd->add_option("--kind", score_args.kind, "task kind for ground-truth join")
        ->check(CLI::IsMember({"COMMON", "SCIENTIFIC", "COMBINED", "CLOSED_SET", "BINARY_CHOICE"}));
    score_cmd->add_option("--labels", score_args.labels, "labels JSON file")->required();
    score_cmd->add_option("--threshold", score_args.threshold, "correctness distance threshold")
        ->capture_default_str();
    score_cmd->add_option("--abstention", score_args.abstention,
                          "abstention substring pattern(s), replacing the defaults");
    score_cmd->add_option("--out", score_args.out, "output directory")->capture_default_str();

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "emit CSV + SVG charts from metrics");
    report_cmd->configurable(true);
    report_cmd->add_option("--metrics", report_args.metrics, "metrics.json file(s)")->required();
    report_cmd->add_option("--compare", report_args.compare, "two alphas for the F1 bar comparison")
        ->delimiter(',');
    report_cmd->add_option("--out", report_args.out, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorFamily::Config);
    }

    // Config sections mark their subcommands as parsed, so dispatch on the
    // name given on the command line.
    std::string chosen;
    for (int i = 1; i < argc && chosen.empty(); ++i) {
        for (const char* name : {"inspect", "merge", "sweep", "run", "score", "report"}) {
            if (std::string(argv[i]) == name) {
                chosen = name;
                break;
            }
        }
    }

    try {
        if (chosen == "inspect") return cmd_inspect(inspect_args);
        if (chosen == "merge") return cmd_merge_or_sweep(app, merge_args, /*is_sweep=*/false);
        if (chosen == "sweep") return cmd_merge_or_sweep(app, sweep_args, /*is_sweep=*/true);
        if (chosen == "run") return cmd_run(app, run_args);
        if (chosen == "score") return cmd_score(app, score_args);
        if (chosen == "report") return cmd_report(app, report_args);
        std::fprintf(stderr, "mergeval: no subcommand given\n");
        return static_cast<int>(ErrorFamily::Config);
    } catch (const Error& e) {
        std::fprintf(stderr, "mergeval: %s\n", e.what());
        return static_cast<int>(e.family);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mergeval: %s\n", e.what());
        return static_cast<int>(ErrorFamily::Io);
    }
    return 0;
}
