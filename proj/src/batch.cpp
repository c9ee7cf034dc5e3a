#include "forensic/batch.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>

#include <spdlog/spdlog.h>

#include "forensic/hash.hpp"
#include "forensic/jsonl.hpp"

namespace forensic {
namespace {

namespace fs = std::filesystem;

Json error_json(const std::exception& e) {
    Json err{{"message", e.what()}};
    if (const auto* r = dynamic_cast<const RequestError*>(&e)) {
        err["status"] = r->status();
        if (dynamic_cast<const PermanentRequestError*>(r)) err["type"] = "permanent";
        else if (dynamic_cast<const TransientExhaustedError*>(r)) err["type"] = "transient_exhausted";
        else err["type"] = "protocol";
    } else if (dynamic_cast<const ConfigError*>(&e)) {
        err["type"] = "config";
    } else {
        err["type"] = "other";
    }
    return err;
}

// Loads the keys already recorded, repairing a torn final line left by an
// interrupted writer.
std::set<std::string> recover_results(const fs::path& path, bool retry_errors) {
    std::set<std::string> done;
    if (!fs::exists(path)) {
        return done;
    }
    std::string bytes = read_file_bytes(path);
    if (!bytes.empty() && bytes.back() != '\n') {
        const auto cut = bytes.rfind('\n');
        bytes.resize(cut == std::string::npos ? 0 : cut + 1);
        spdlog::warn("{}: dropped a partial trailing line", path.string());
    }
    std::string kept;
    const auto parsed = parse_jsonl<Json>(bytes, ParseMode::Lenient);
    for (const auto& err : parsed.errors) {
        spdlog::warn("{}: line {} unreadable: {}", path.string(), err.line, err.message);
    }
    for (const auto& line : parsed.items) {
        if (!line.contains("key")) continue;
        if (retry_errors && line.contains("error")) continue;
        done.insert(line.at("key").get<std::string>());
        kept += canonical_dump(line);
        kept += '\n';
    }
    if (kept != bytes) {
        write_file_atomic(path, kept);
    }
    return done;
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
    write_file_atomic(out_dir / "manifest.json", canonical_dump(Json(manifest)) + "\n");
}

}  // namespace

void to_json(Json& j, const BatchReport& r) {
    j = Json{{"total", r.total},
             {"resumed", r.resumed},
             {"completed", r.completed},
             {"errors", r.errors},
             {"cache_hits", r.cache_hits},
             {"cache_hit_rate", r.cache_hit_rate},
             {"interrupted", r.interrupted},
             {"status", to_string(r.status)}};
}

std::string batch_input_hash(const ChatClient& client, const std::vector<KeyedRequest>& requests) {
    std::vector<std::string> lines;
    lines.reserve(requests.size());
    for (const auto& r : requests) {
        lines.push_back(r.key + "\t" + client.cache_key(r.request).digest);
    }
    std::sort(lines.begin(), lines.end());
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    return sha256_hex(joined);
}

BatchReport run_batch(const std::vector<KeyedRequest>& requests, RunManifest& manifest, const fs::path& out_dir,
                      ChatClient& client, const TaskPool& pool, const BatchOptions& options) {
    {
        std::set<std::string> keys;
        for (const auto& r : requests) {
            if (!keys.insert(r.key).second) throw ConfigError("run_batch: duplicate key '" + r.key + "'");
        }
    }
    fs::create_directories(out_dir);

    manifest.endpoint_hash = endpoint_hash(client.config());
    manifest.model_id = client.config().model_id;
    manifest.input_hash = batch_input_hash(client, requests);
    if (manifest.run_id.empty()) {
        manifest.run_id = manifest.input_hash.substr(0, 16);
    }
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        const auto previous = Json::parse(read_file_bytes(manifest_path)).get<RunManifest>();
        if (previous.run_id != manifest.run_id) {
            throw ConfigError("output directory belongs to run " + previous.run_id);
        }
        if (previous.input_hash != manifest.input_hash) {
            throw ConfigError("run " + previous.run_id + " was started with a different request set");
        }
        manifest.created_at = previous.created_at;
    }
    if (manifest.created_at.empty()) {
        manifest.created_at = utc_timestamp_now();
    }
    manifest.status = RunStatus::Running;
    write_manifest(out_dir, manifest);

    const fs::path results_path = out_dir / "results.jsonl";
    const std::set<std::string> done = recover_results(results_path, options.retry_errors);

    std::vector<const KeyedRequest*> pending;
    for (const auto& r : requests) {
        if (!done.count(r.key)) pending.push_back(&r);
    }

    BatchReport report;
    report.total = requests.size();
    report.resumed = requests.size() - pending.size();

    std::ofstream out(results_path, std::ios::binary | std::ios::app);
    if (!out) {
        manifest.status = RunStatus::Failed;
        write_manifest(out_dir, manifest);
        throw IoError("cannot open " + results_path.string());
    }
    std::mutex write_mutex;

    try {
        pool.run(
            pending.size(),
            [&](std::size_t i) {
                const KeyedRequest& item = *pending[i];
                Json line{{"key", item.key}};
                bool ok = true;
                bool hit = false;
                try {
                    ChatResponse resp = client.send(item.request);
                    hit = resp.from_cache;
                    line["response"] = resp;
                } catch (const std::exception& e) {
                    ok = false;
                    line["error"] = error_json(e);
                    spdlog::warn("request {} failed: {}", item.key, e.what());
                }
                {
                    std::lock_guard guard(write_mutex);
                    out << canonical_dump(line) << '\n';
                    out.flush();
                    if (!out) throw IoError("write to " + results_path.string() + " failed");
                    ++report.completed;
                    if (!ok) ++report.errors;
                    if (hit) ++report.cache_hits;
                }
                if (options.on_result) options.on_result(item.key, ok);
            },
            options.stop);
    } catch (const IoError&) {
        manifest.status = RunStatus::Failed;
        write_manifest(out_dir, manifest);
        throw;
    }

    report.interrupted = report.resumed + report.completed < report.total;
    report.cache_hit_rate =
        report.completed == 0 ? 0.0 : static_cast<double>(report.cache_hits) / static_cast<double>(report.completed);
    manifest.status = report.interrupted ? RunStatus::Running : RunStatus::Complete;
    report.status = manifest.status;
    write_manifest(out_dir, manifest);
    return report;
}

}  // namespace forensic
