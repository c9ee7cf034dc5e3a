#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forensic/client.hpp"
#include "forensic/executor.hpp"
#include "forensic/jsonl.hpp"
#include "forensic/rng.hpp"
#include "forensic/schema.hpp"

namespace forensic::p2 {

// One V1 finding. bbox2d is empty (whole image) or [y_min, x_min, y_max, x_max]
// in [0, 1000].
struct EvidenceEntry {
    std::string text;
    std::vector<int> bbox2d;
    bool operator==(const EvidenceEntry&) const = default;
};

void to_json(Json& j, const EvidenceEntry& e);
void from_json(const Json& j, EvidenceEntry& e);

ValidationReport validate_entry(const EvidenceEntry& entry);

class EvidenceParseError : public DataError {
public:
    using DataError::DataError;
};

struct EvidenceParse {
    std::vector<EvidenceEntry> entries;
    std::vector<std::string> diagnostics;  // one per dropped element (lenient mode)
};

// First JSON array in `text` (code fences and prose tolerated). Invalid
// elements are dropped with a diagnostic in lenient mode; in strict mode the
// first one throws EvidenceParseError, as does a missing array.
EvidenceParse parse_evidence(std::string_view text, ParseMode mode = ParseMode::Lenient);

// Canonical JSON array; parse_evidence(serialize_evidence(x)).entries == x.
std::string serialize_evidence(const std::vector<EvidenceEntry>& entries);

struct SeedAnnotation {
    std::string image_id;
    Label label = Label::Real;
    std::vector<EvidenceEntry> evidence;  // what the image shows
    std::string counterpart;             // what common sense says it should show
    bool operator==(const SeedAnnotation&) const = default;
};

void to_json(Json& j, const SeedAnnotation& s);
void from_json(const Json& j, SeedAnnotation& s);

ValidationReport validate_seed(const SeedAnnotation& seed);

// Text fed to V3's {SEED ANNOTATION} slot: an "authenticity:" line, then the
// "visual evidence:" and "commonsense counterpart:" blocks.
std::string serialize_seed(const SeedAnnotation& seed);

struct Scenario {
    std::string id;
    std::string description;
};

void from_json(const Json& j, Scenario& s);

std::vector<Scenario> default_scenarios();

ChatRequest render_v1(Label label, const ImagePayload& image);
ChatRequest render_v2(Label label, std::string_view description,
                      const std::optional<ImagePayload>& image = std::nullopt);
// V3 followed by the output-format block for `rounds` rounds. With
// `structured`, a JSON schema {"dialogue": [{role, content}]} is requested.
ChatRequest render_v3(const SeedAnnotation& seed, const Scenario& scenario, int rounds,
                      const std::optional<ImagePayload>& image = std::nullopt, bool structured = true);

inline constexpr int kMinRounds = 1;
inline constexpr int kMaxRounds = 4;

struct Dialogue {
    std::vector<Message> messages;
    // Number of assistant turns.
    int rounds() const;
};

// Accepts a JSON array of {role, content} or an object holding one under
// "dialogue". Throws DataError when neither is present or an element is
// malformed.
Dialogue parse_dialogue(std::string_view text);

// True when `text` asserts an image's authenticity ("this fake image",
// "the photo is real"); questions about it ("is this photo real?") do not.
bool asserts_authenticity(std::string_view text);

// Structural checks. With `expected_rounds`, the round count must match it.
ValidationReport validate_dialogue(const Dialogue& dialogue, std::optional<int> expected_rounds = std::nullopt);

class SynthesisError : public Error {
public:
    SynthesisError(const std::string& what, std::vector<std::string> transcripts)
        : Error(what), transcripts_(std::move(transcripts)) {}
    const std::vector<std::string>& transcripts() const { return transcripts_; }

private:
    std::vector<std::string> transcripts_;
};

struct SynthesisOptions {
    int max_retries = 2;
    std::optional<int> forced_rounds;
};

/// Draws r uniformly from {1..4} (unless forced), renders V3 for r rounds and
/// validates the reply, retrying with a fresh sampling seed up to
/// `max_retries` times. The returned dialogue has ImageRef(seed.image_id) as
/// the first part of its first user message.
Dialogue synthesize_dialogue(const SeedAnnotation& seed, const Scenario& scenario, ChatClient& client, Rng& rng,
                             const std::optional<ImagePayload>& image = std::nullopt,
                             const SynthesisOptions& options = {});

// ---------------------------------------------------------------------------
// Corpus build

struct PoolSpec {
    std::string source;
    Label label = Label::Real;
    std::filesystem::path dir;
};

using Quotas = std::map<std::string, std::size_t>;

// JSON array of {"source", "label", "dir"}; relative dirs resolve against `base`.
std::vector<PoolSpec> pools_from_json(const Json& j, const std::filesystem::path& base);
Quotas quotas_from_json(const Json& j);
// 17,000 real and 17,000 fake across four generator sources.
Quotas default_quotas();

struct Target {
    ImageRecord image;
    Label label = Label::Real;
};

// Indexes every pool and draws each source's quota with a seeded sample.
// Throws ConfigError when a quota names an unknown source or exceeds its
// pool. No network access.
std::vector<Target> plan_p2(const std::vector<PoolSpec>& pools, const Quotas& quotas, std::uint64_t seed);

struct P2Failure {
    std::string id;
    std::string stage;  // v1, v2, v3
    std::string error;
    std::vector<std::string> transcripts;
};

void to_json(Json& j, const P2Failure& f);

struct P2Options {
    std::uint64_t seed = 0;
    std::vector<Scenario> scenarios = default_scenarios();
    SynthesisOptions synthesis;
};

struct P2Result {
    std::vector<Sample> samples;        // sorted by id
    std::vector<SeedAnnotation> seeds;  // sorted by image id
    std::vector<P2Failure> failures;    // sorted by id
    std::vector<ImageRecord> images;
};

// Runs V1 -> V2 -> V3 for every target. Each target draws from its own
// generator derived from (seed, image id), so the result does not depend on
// scheduling.
P2Result build_p2(const std::vector<Target>& targets, ChatClient& client, const TaskPool& pool,
                  const P2Options& options);

// p2.jsonl, seeds.jsonl, failures.jsonl, images.jsonl, build_report.json.
void write_p2(const P2Result& result, const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace forensic::p2
