#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "forensic/json_util.hpp"

namespace forensic {

enum class Label { Real, Fake };

// Free-form model output classified against the verdict lexicon. Unparsed is
// terminal: it is never coerced into a Label.
enum class Verdict { Real, Fake, Unparsed };

std::string_view to_string(Label label);
std::string_view to_string(Verdict verdict);
Label parse_label(std::string_view text);
std::optional<Label> as_label(Verdict verdict);
Verdict as_verdict(Label label);

struct ImageRecord {
    std::string id;
    std::string path;  // relative to the owning ImageIndex root unless absolute
    std::string sha256;
    int width_px = 0;
    int height_px = 0;
    std::string source;

    bool operator==(const ImageRecord&) const = default;
};

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct TextPart {
    std::string text;
    bool operator==(const TextPart&) const = default;
};

struct ImageRef {
    std::string image_id;
    bool operator==(const ImageRef&) const = default;
};

using Part = std::variant<TextPart, ImageRef>;

struct Message {
    Role role = Role::User;
    std::vector<Part> parts;

    // Concatenation of the text parts.
    std::string text() const;
    std::vector<std::string> image_ids() const;

    static Message text_only(Role role, std::string text);

    bool operator==(const Message&) const = default;
};

struct Sample {
    std::string id;
    std::vector<std::string> images;
    Label label = Label::Real;
    std::string generator;
    std::string source;
    std::vector<Message> messages;
    std::map<std::string, std::string> meta;

    bool operator==(const Sample&) const = default;
};

enum class RunStatus { Running, Complete, Failed };

std::string_view to_string(RunStatus status);

struct RunManifest {
    std::string run_id;
    std::string endpoint_hash;
    std::string model_id;
    std::string input_hash;
    std::string created_at;  // UTC, ISO-8601 with a trailing 'Z'
    RunStatus status = RunStatus::Running;

    bool operator==(const RunManifest&) const = default;
};

std::string utc_timestamp_now();

struct Violation {
    std::string rule;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool has(std::string_view rule) const;
    void add(std::string rule, std::string detail = {});
    void merge(const ValidationReport& other);
    std::string summary() const;
};

// Images known to a corpus, keyed by id.
class ImageIndex {
public:
    ImageIndex() = default;
    explicit ImageIndex(std::filesystem::path root) : root_(std::move(root)) {}

    void add(ImageRecord record);
    const ImageRecord* find(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }
    std::size_t size() const { return records_.size(); }

    std::filesystem::path resolve(const ImageRecord& record) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::map<std::string, ImageRecord, std::less<>> records_;
};

enum class SampleKind { Training, Prompt };

// Reports every violated Sample invariant; never throws.
ValidationReport validate_sample(const Sample& sample, const ImageIndex& index,
                                 SampleKind kind = SampleKind::Training);

void to_json(Json& j, const ImageRecord& r);
void from_json(const Json& j, ImageRecord& r);
void to_json(Json& j, const Message& m);
void from_json(const Json& j, Message& m);
void to_json(Json& j, const Sample& s);
void from_json(const Json& j, Sample& s);
void to_json(Json& j, const RunManifest& m);
void from_json(const Json& j, RunManifest& m);

}  // namespace forensic
