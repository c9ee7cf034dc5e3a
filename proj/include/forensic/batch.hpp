#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stop_token>
#include <string>
#include <vector>

#include "forensic/client.hpp"
#include "forensic/executor.hpp"
#include "forensic/schema.hpp"

namespace forensic {

struct KeyedRequest {
    std::string key;
    ChatRequest request;
};

struct BatchOptions {
    std::stop_token stop;
    // Called after each result line is persisted.
    std::function<void(const std::string& key, bool ok)> on_result;
    // Drop recorded error lines before resuming so those keys run again.
    bool retry_errors = false;
};

struct BatchReport {
    std::size_t total = 0;
    std::size_t resumed = 0;  // keys already present in results.jsonl
    std::size_t completed = 0;  // lines written by this run
    std::size_t errors = 0;
    std::size_t cache_hits = 0;
    double cache_hit_rate = 0.0;  // over lines written by this run
    bool interrupted = false;
    RunStatus status = RunStatus::Running;
};

void to_json(Json& j, const BatchReport& r);

// Hash of a keyed request set, independent of list order.
std::string batch_input_hash(const ChatClient& client, const std::vector<KeyedRequest>& requests);

/// Runs every request not yet recorded in `<out_dir>/results.jsonl`, appending
/// one canonical line per completion: {"key", "response"} or {"key", "error"}.
///
/// `manifest` is completed (endpoint hash, model, input hash, timestamps) and
/// persisted as `<out_dir>/manifest.json`. Resuming into a directory whose
/// manifest names a different run or input set is a ConfigError. Individual
/// request failures are recorded and never abort the batch; the manifest is
/// marked failed only when results cannot be written.
BatchReport run_batch(const std::vector<KeyedRequest>& requests, RunManifest& manifest,
                      const std::filesystem::path& out_dir, ChatClient& client, const TaskPool& pool,
                      const BatchOptions& options = {});

}  // namespace forensic
