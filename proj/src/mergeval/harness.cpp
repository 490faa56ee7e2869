#include "mergeval/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"

namespace mergeval::harness {

namespace {

using nlohmann::json;

json parse_line(const std::string& line, const std::filesystem::path& path, size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": not a JSON object");
    }
    return j;
}

std::string require_string(const json& j, const char* field, const std::filesystem::path& path,
                           size_t lineno) {
    if (!j.contains(field) || !j[field].is_string()) {
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": missing string field '" +
                            field + "'");
    }
    return j[field].get<std::string>();
}

std::string run_key(const std::string& sample_id, double alpha, const std::string& kind) {
    return sample_id + "\x1f" + fmt_num(alpha) + "\x1f" + kind;
}

}  // namespace

std::vector<EvalSample> load_manifest(const std::filesystem::path& path) {
    std::vector<EvalSample> samples;
    std::set<std::string> ids;
    size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        EvalSample s;
        s.sample_id = require_string(j, "sample_id", path, lineno);
        if (!ids.insert(s.sample_id).second) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) +
                                ": duplicate sample_id '" + s.sample_id + "'");
        }
        s.dataset = j.value("dataset", "");
        if (j.contains("common_name") && j["common_name"].is_string()) {
            s.common_name = j["common_name"].get<std::string>();
        }
        if (j.contains("scientific_name") && j["scientific_name"].is_string()) {
            s.scientific_name = j["scientific_name"].get<std::string>();
        }
        s.audio_ref = j.value("audio_ref", "");
        if (j.contains("extra_labels") && j["extra_labels"].is_object()) {
            for (const auto& [k, v] : j["extra_labels"].items()) {
                if (v.is_string()) s.extra_labels[k] = v.get<std::string>();
            }
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw ManifestError(path.string() + ": manifest is empty");
    return samples;
}

std::vector<prompts::PoolItem> load_pool(const std::filesystem::path& path) {
    std::vector<prompts::PoolItem> pool;
    size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        prompts::PoolItem item;
        item.sample_id = require_string(j, "sample_id", path, lineno);
        item.audio_ref = require_string(j, "audio_ref", path, lineno);
        item.label = require_string(j, "label", path, lineno);
        pool.push_back(std::move(item));
    }
    return pool;
}

void check_pool_disjoint(const FewShotSpec& fewshot, const std::vector<EvalSample>& manifest) {
    std::set<std::string> eval_ids;
    for (const auto& s : manifest) eval_ids.insert(s.sample_id);
    for (const auto& item : fewshot.pool) {
        if (eval_ids.count(item.sample_id)) {
            throw PoolOverlap("few-shot pool sample '" + item.sample_id +
                              "' is also in the evaluation set");
        }
    }
}

std::string truth_for(const EvalSample& sample, scoring::TaskKind kind) {
    switch (kind) {
        case scoring::TaskKind::Common:
        case scoring::TaskKind::ClosedSet:
            if (!sample.common_name) {
                throw MissingGroundTruth("sample '" + sample.sample_id + "' has no common_name");
            }
            return *sample.common_name;
        case scoring::TaskKind::Scientific:
            if (!sample.scientific_name) {
                throw MissingGroundTruth("sample '" + sample.sample_id + "' has no scientific_name");
            }
            return *sample.scientific_name;
        case scoring::TaskKind::Combined:
            if (!sample.scientific_name || !sample.common_name) {
                throw MissingGroundTruth("sample '" + sample.sample_id +
                                         "' needs both scientific_name and common_name");
            }
            return scoring::combined_target(*sample.scientific_name, *sample.common_name);
        case scoring::TaskKind::BinaryChoice: {
            const auto it = sample.extra_labels.find("label");
            if (it == sample.extra_labels.end()) {
                throw MissingGroundTruth("sample '" + sample.sample_id +
                                         "' has no extra_labels.label for a binary-choice task");
            }
            return it->second;
        }
    }
    throw MissingGroundTruth("sample '" + sample.sample_id + "': unsupported task kind");
}

namespace {

struct RequestOutcome {
    bool ok = false;
    std::string response_text;
    std::string error_message;
    int64_t latency_ms = 0;
};

bool debug_http() {
    static const bool enabled = [] {
        const char* v = std::getenv("MERGEVAL_DEBUG");
        return v && *v && std::string_view(v) != "0";
    }();
    return enabled;
}

RequestOutcome issue_request(const EndpointConfig& cfg, const std::string& prompt,
                             const std::string& audio_ref) {
    json body = {
        {"model", cfg.model},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
        {"temperature", cfg.temperature},
        {"max_tokens", cfg.max_tokens},
    };
    if (!audio_ref.empty()) body["audio_ref"] = audio_ref;
    const std::string payload = body.dump();
    if (debug_http()) std::fprintf(stderr, "mergeval debug: request %s\n", payload.c_str());

    RequestOutcome outcome;
    const auto started = std::chrono::steady_clock::now();
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            const int delay = cfg.backoff_initial_ms * (1 << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        httplib::Client client(cfg.base_url);
        client.set_connection_timeout(cfg.timeout_s);
        client.set_read_timeout(cfg.timeout_s);
        httplib::Headers headers;
        if (!cfg.auth_token.empty()) {
            headers.emplace("Authorization", "Bearer " + cfg.auth_token);
        }
        auto res = client.Post(cfg.path, headers, payload, "application/json");
        if (!res) {
            outcome.error_message = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            outcome.error_message = "server error: HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            outcome.error_message = "HTTP " + std::to_string(res->status);
            break;  // 4xx is not retryable
        }
        if (debug_http()) std::fprintf(stderr, "mergeval debug: response %s\n", res->body.c_str());
        const json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
            reply["choices"].empty() || !reply["choices"][0].contains("message") ||
            !reply["choices"][0]["message"].contains("content") ||
            !reply["choices"][0]["message"]["content"].is_string()) {
            outcome.error_message = "malformed endpoint response";
            continue;
        }
        outcome.ok = true;
        outcome.response_text = reply["choices"][0]["message"]["content"].get<std::string>();
        break;
    }
    outcome.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    return outcome;
}

json record_to_json(const RunRecord& r) {
    json j = {
        {"sample_id", r.sample_id}, {"alpha", r.alpha},
        {"kind", r.kind},           {"prompt_text", r.prompt_text},
        {"permutation_seed", r.permutation_seed}, {"response_text", r.response_text},
        {"endpoint", r.endpoint},   {"timestamp", r.timestamp},
        {"latency_ms", r.latency_ms},
    };
    if (r.error) {
        j["error"] = true;
        j["error_message"] = r.error_message;
    }
    return j;
}

}  // namespace

std::vector<RunRecord> load_run_file(const std::filesystem::path& path) {
    std::vector<RunRecord> records;
    std::map<std::string, size_t> by_key;  // last record wins
    size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        if (j.contains("_meta")) continue;
        RunRecord r;
        r.sample_id = require_string(j, "sample_id", path, lineno);
        r.alpha = j.value("alpha", 0.0);
        r.kind = j.value("kind", "");
        r.prompt_text = j.value("prompt_text", "");
        r.permutation_seed = j.value("permutation_seed", uint64_t{0});
        r.response_text = j.value("response_text", "");
        r.endpoint = j.value("endpoint", "");
        r.timestamp = j.value("timestamp", "");
        r.latency_ms = j.value("latency_ms", int64_t{0});
        r.error = j.value("error", false);
        r.error_message = j.value("error_message", "");
        const std::string key = run_key(r.sample_id, r.alpha, r.kind);
        const auto it = by_key.find(key);
        if (it != by_key.end()) {
            records[it->second] = std::move(r);
        } else {
            by_key[key] = records.size();
            records.push_back(std::move(r));
        }
    }
    return records;
}

RunStats run(const std::vector<EvalSample>& manifest, const prompts::PromptTemplate& tmpl,
             const scoring::LabelSet& labels, const EndpointConfig& endpoint, const RunOptions& opts,
             const std::filesystem::path& out_path) {
    if (manifest.empty()) throw ManifestError("manifest is empty");
    if (opts.fewshot) check_pool_disjoint(*opts.fewshot, manifest);

    const std::string kind_name(prompts::prompt_kind_name(opts.kind));
    std::set<std::string> done;
    const bool resuming = std::filesystem::exists(out_path);
    if (resuming) {
        for (const auto& r : load_run_file(out_path)) {
            if (!r.error) done.insert(run_key(r.sample_id, r.alpha, r.kind));
        }
    }

    std::vector<const EvalSample*> todo;
    for (const auto& s : manifest) {
        if (!done.count(run_key(s.sample_id, opts.alpha, kind_name))) todo.push_back(&s);
    }

    RunStats stats;
    stats.skipped = static_cast<int>(manifest.size() - todo.size());
    stats.requested = static_cast<int>(todo.size());

    std::vector<RunRecord> fresh(todo.size());
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            try {
                const EvalSample& sample = *todo[i];
                const auto rendered = prompts::render_prompt(sample, tmpl, labels, opts.fewshot);
                RunRecord r;
                r.sample_id = sample.sample_id;
                r.alpha = opts.alpha;
                r.kind = kind_name;
                r.prompt_text = rendered.text;
                r.permutation_seed = rendered.permutation_seed;
                r.endpoint = endpoint.base_url + endpoint.path;
                r.timestamp = iso8601_utc_now();
                const auto outcome = issue_request(endpoint, rendered.text, sample.audio_ref);
                r.latency_ms = outcome.latency_ms;
                if (outcome.ok) {
                    r.response_text = outcome.response_text;
                } else {
                    r.error = true;
                    r.error_message = outcome.error_message;
                }
                fresh[i] = std::move(r);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    const int nthreads = std::clamp<int>(opts.concurrency, 1, static_cast<int>(std::max<size_t>(todo.size(), 1)));
    std::vector<std::thread> threads;
    for (int t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);

    std::sort(fresh.begin(), fresh.end(),
              [](const RunRecord& a, const RunRecord& b) { return a.sample_id < b.sample_id; });

    std::ofstream out(out_path, std::ios::app);
    if (!out) throw IoError("cannot open run file for append: " + out_path.string());
    if (!resuming) {
        const json meta = {
            {"_meta",
             {{"endpoint", endpoint.base_url + endpoint.path},
              {"model", endpoint.model},
              {"kind", kind_name},
              {"alpha", opts.alpha},
              {"temperature", endpoint.temperature},
              {"max_tokens", endpoint.max_tokens},
              {"master_seed", opts.fewshot ? opts.fewshot->master_seed : 0},
              {"seed_derivation", "fnv1a64(master_seed_le || sample_id), splitmix64 Fisher-Yates"},
              {"labels_order", labels.classes}}},
        };
        out << meta.dump() << '\n';
    }
    for (const auto& r : fresh) {
        out << record_to_json(r).dump() << '\n';
        if (r.error) ++stats.failed;
        else ++stats.succeeded;
    }
    if (!out) throw IoError("write failed: " + out_path.string());
    return stats;
}

std::vector<scoring::ScoreRow> export_for_scoring(const std::filesystem::path& run_path,
                                                  const std::vector<EvalSample>& manifest,
                                                  scoring::TaskKind kind) {
    std::map<std::string, const EvalSample*> by_id;
    for (const auto& s : manifest) by_id[s.sample_id] = &s;

    std::vector<scoring::ScoreRow> rows;
    for (const auto& r : load_run_file(run_path)) {
        if (r.error) continue;
        const auto it = by_id.find(r.sample_id);
        if (it == by_id.end()) {
            throw UnknownSampleId("run record references sample '" + r.sample_id +
                                  "' which is not in the manifest");
        }
        scoring::ScoreRow row;
        row.sample_id = r.sample_id;
        row.output_text = r.response_text;
        row.truth = truth_for(*it->second, kind);
        row.alpha = r.alpha;
        row.kind = kind;
        row.dataset = it->second->dataset;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_score_rows(const std::vector<scoring::ScoreRow>& rows, const std::filesystem::path& path) {
    std::string out;
    for (const auto& r : rows) {
        const json j = {
            {"sample_id", r.sample_id},     {"output_text", r.output_text},
            {"truth", r.truth},             {"alpha", r.alpha},
            {"task_kind", std::string(scoring::task_kind_name(r.kind))},
            {"dataset", r.dataset},
        };
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

std::vector<scoring::ScoreRow> load_score_rows(const std::filesystem::path& path) {
    std::vector<scoring::ScoreRow> rows;
    size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse_line(line, path, lineno);
        scoring::ScoreRow r;
        r.sample_id = require_string(j, "sample_id", path, lineno);
        r.output_text = require_string(j, "output_text", path, lineno);
        r.truth = require_string(j, "truth", path, lineno);
        if (!j.contains("alpha") || !j["alpha"].is_number()) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": missing number 'alpha'");
        }
        r.alpha = j["alpha"].get<double>();
        r.kind = scoring::parse_task_kind(require_string(j, "task_kind", path, lineno));
        r.dataset = j.value("dataset", "");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace mergeval::harness
