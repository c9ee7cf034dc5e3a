#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forensic/client.hpp"
#include "forensic/executor.hpp"
#include "forensic/schema.hpp"

namespace forensic::p1 {

// A real image and its reconstruction. Same dimensions, different bytes.
struct PairRecord {
    ImageRecord real;
    ImageRecord fake;
    std::string backend;
};

void to_json(Json& j, const PairRecord& p);
void from_json(const Json& j, PairRecord& p);

// Closed-ended instruction with an explicit answer token per label, so that
// yes/no polarity is never inferred.
struct QATemplate {
    std::string id;
    std::string instruction;
    std::string answer_real;
    std::string answer_fake;

    const std::string& answer(Label label) const { return label == Label::Real ? answer_real : answer_fake; }
};

void to_json(Json& j, const QATemplate& t);
void from_json(const Json& j, QATemplate& t);  // throws DataError if answers are missing or equal

// The shipped pool: the two reference instructions plus paraphrases.
std::vector<QATemplate> default_templates();

struct IndexResult {
    std::vector<ImageRecord> records;
    std::vector<std::string> warnings;
};

// Recursively indexes PNG/JPEG/WebP files under `dir`, sorted by relative
// path. Ids are "<source_tag>/<relative path>"; `path` is absolute.
// Undecodable files are skipped and byte-identical duplicates dropped, each
// with a warning.
IndexResult index_images(const std::filesystem::path& dir, const std::string& source_tag);

class Reconstructor {
public:
    virtual ~Reconstructor() = default;
    virtual std::string tag() const = 0;
    // Throws ConfigError when the backend cannot be used.
    virtual void check_ready() {}
    // Encoded image bytes in, encoded reconstruction out.
    virtual std::string reconstruct(std::string_view image_bytes) = 0;
};

// Bicubic 50% downscale and upscale back. Deterministic, no network.
class StubReconstructor final : public Reconstructor {
public:
    std::string tag() const override { return "stub-resample"; }
    std::string reconstruct(std::string_view image_bytes) override;
};

// Client for the autoencoder sidecar: POST /reconstruct, GET /health.
class SidecarReconstructor final : public Reconstructor {
public:
    SidecarReconstructor(std::shared_ptr<Transport> transport, RetryPolicy retry,
                         std::optional<std::uint64_t> seed = std::nullopt);

    std::string tag() const override { return "vae-sd21-sidecar"; }
    void check_ready() override;
    std::string reconstruct(std::string_view image_bytes) override;

    void set_sleeper(ChatClient::Sleeper sleeper) { sleeper_ = std::move(sleeper); }

private:
    std::shared_ptr<Transport> transport_;
    RetryPolicy retry_;
    std::optional<std::uint64_t> seed_;
    ChatClient::Sleeper sleeper_;
};

struct PairFailure {
    std::string real_id;
    std::string error;
};

struct PairBuildReport {
    std::vector<PairRecord> pairs;  // sorted by real id
    std::vector<PairFailure> failures;
};

/// Reconstructs each real image and stores both images in the corpus store
/// as images/<sha256>.<ext>, with paths in the returned records relative to
/// `store_root`. Reconstructions are re-encoded as PNG (dropping metadata) and
/// resized back to the source dimensions when the backend changed them.
/// Per-image failures are collected; zero successful pairs is an Error.
PairBuildReport build_pairs(const std::vector<ImageRecord>& reals, Reconstructor& reconstructor,
                            const std::filesystem::path& store_root, const TaskPool& pool);

// Two samples per pair (real then fake), with a template drawn per sample from
// a generator seeded by `seed`. The assistant reply is the template's answer
// token for the sample's label.
std::vector<Sample> emit_p1(const std::vector<PairRecord>& pairs, const std::vector<QATemplate>& templates,
                            std::uint64_t seed);

ImageIndex pair_index(const std::vector<PairRecord>& pairs, const std::filesystem::path& store_root);

struct CorpusOptions {
    std::filesystem::path reals_dir;
    std::string source_tag = "mscoco";
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
};

struct CorpusResult {
    std::size_t indexed = 0;
    PairBuildReport pairs;
    std::vector<Sample> samples;
};

// index -> build_pairs -> emit_p1, writing pairs.jsonl, p1.jsonl and
// build_report.json under out_dir.
CorpusResult build_corpus(const CorpusOptions& options, Reconstructor& reconstructor, const TaskPool& pool);

}  // namespace forensic::p1
