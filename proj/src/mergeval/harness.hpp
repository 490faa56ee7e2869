#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mergeval/prompts.hpp"
#include "mergeval/scoring.hpp"

namespace mergeval::harness {

using prompts::EvalSample;
using prompts::FewShotSpec;

std::vector<EvalSample> load_manifest(const std::filesystem::path& path);
std::vector<prompts::PoolItem> load_pool(const std::filesystem::path& path);

// Hard error when the few-shot pool shares a sample_id with the eval set.
void check_pool_disjoint(const FewShotSpec& fewshot, const std::vector<EvalSample>& manifest);

struct RunRecord {
    std::string sample_id;
    double alpha = 0.0;
    std::string kind;  // prompt kind name
    std::string prompt_text;
    uint64_t permutation_seed = 0;
    std::string response_text;
    std::string endpoint;
    std::string timestamp;
    int64_t latency_ms = 0;
    bool error = false;
    std::string error_message;
};

struct EndpointConfig {
    std::string base_url;                       // e.g. http://127.0.0.1:8000
    std::string path = "/v1/chat/completions";  // chat-style completions API
    std::string model = "merged";
    std::string auth_token;  // sent as a bearer token when non-empty
    double temperature = 0.0;
    int max_tokens = 64;
    int max_retries = 3;
    int backoff_initial_ms = 100;
    int timeout_s = 30;
};

struct RunOptions {
    double alpha = 0.0;
    prompts::PromptKind kind = prompts::PromptKind::ClosedSet;
    int concurrency = 1;
    std::optional<FewShotSpec> fewshot;
};

struct RunStats {
    int requested = 0;
    int succeeded = 0;
    int failed = 0;
    int skipped = 0;  // already present in the run file
};

// Drives the endpoint over the manifest and appends RunRecords (line-
// delimited JSON, sample_id order) to out_path. Existing successful
// (sample_id, alpha, kind) keys are skipped, so a complete run is a no-op
// and partial runs resume.
RunStats run(const std::vector<EvalSample>& manifest, const prompts::PromptTemplate& tmpl,
             const scoring::LabelSet& labels, const EndpointConfig& endpoint, const RunOptions& opts,
             const std::filesystem::path& out_path);

// Records from a run file; the leading "_meta" line is skipped and the last
// record wins for a repeated key.
std::vector<RunRecord> load_run_file(const std::filesystem::path& path);

// Joins run records to ground truth, producing scoring-input rows. Errored
// records are dropped (they are endpoint failures, not model abstentions).
std::vector<scoring::ScoreRow> export_for_scoring(const std::filesystem::path& run_path,
                                                  const std::vector<EvalSample>& manifest,
                                                  scoring::TaskKind kind);

std::string truth_for(const EvalSample& sample, scoring::TaskKind kind);

// Scoring-input rows as line-delimited JSON.
void write_score_rows(const std::vector<scoring::ScoreRow>& rows, const std::filesystem::path& path);
std::vector<scoring::ScoreRow> load_score_rows(const std::filesystem::path& path);

}  // namespace mergeval::harness
