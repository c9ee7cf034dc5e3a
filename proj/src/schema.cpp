#include "forensic/schema.hpp"

#include <chrono>
#include <ctime>
#include <set>

#include "forensic/error.hpp"

namespace forensic {

std::string_view to_string(Label label) {
    return label == Label::Real ? "real" : "fake";
}

std::string_view to_string(Verdict verdict) {
    switch (verdict) {
        case Verdict::Real: return "real";
        case Verdict::Fake: return "fake";
        case Verdict::Unparsed: return "unparsed";
    }
    return "unparsed";
}

Label parse_label(std::string_view text) {
    const std::string t = to_lower(text);
    if (t == "real") return Label::Real;
    if (t == "fake") return Label::Fake;
    throw DataError("unknown label '" + std::string(text) + "'");
}

std::optional<Label> as_label(Verdict verdict) {
    switch (verdict) {
        case Verdict::Real: return Label::Real;
        case Verdict::Fake: return Label::Fake;
        case Verdict::Unparsed: return std::nullopt;
    }
    return std::nullopt;
}

Verdict as_verdict(Label label) {
    return label == Label::Real ? Verdict::Real : Verdict::Fake;
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view text) {
    if (text == "system") return Role::System;
    if (text == "user") return Role::User;
    if (text == "assistant") return Role::Assistant;
    throw DataError("unknown role '" + std::string(text) + "'");
}

std::string_view to_string(RunStatus status) {
    switch (status) {
        case RunStatus::Running: return "running";
        case RunStatus::Complete: return "complete";
        case RunStatus::Failed: return "failed";
    }
    return "failed";
}

static RunStatus parse_run_status(std::string_view text) {
    if (text == "running") return RunStatus::Running;
    if (text == "complete") return RunStatus::Complete;
    if (text == "failed") return RunStatus::Failed;
    throw DataError("unknown run status '" + std::string(text) + "'");
}

std::string utc_timestamp_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string Message::text() const {
    std::string out;
    for (const auto& part : parts) {
        if (const auto* t = std::get_if<TextPart>(&part)) {
            out += t->text;
        }
    }
    return out;
}

std::vector<std::string> Message::image_ids() const {
    std::vector<std::string> out;
    for (const auto& part : parts) {
        if (const auto* r = std::get_if<ImageRef>(&part)) {
            out.push_back(r->image_id);
        }
    }
    return out;
}

Message Message::text_only(Role role, std::string text) {
    return Message{role, {TextPart{std::move(text)}}};
}

bool ValidationReport::has(std::string_view rule) const {
    for (const auto& v : violations) {
        if (v.rule == rule) return true;
    }
    return false;
}

void ValidationReport::add(std::string rule, std::string detail) {
    violations.push_back({std::move(rule), std::move(detail)});
}

void ValidationReport::merge(const ValidationReport& other) {
    violations.insert(violations.end(), other.violations.begin(), other.violations.end());
}

std::string ValidationReport::summary() const {
    std::string out;
    for (const auto& v : violations) {
        if (!out.empty()) out += "; ";
        out += v.rule;
        if (!v.detail.empty()) out += " (" + v.detail + ")";
    }
    return out;
}

void ImageIndex::add(ImageRecord record) {
    std::string id = record.id;
    records_.insert_or_assign(std::move(id), std::move(record));
}

const ImageRecord* ImageIndex::find(std::string_view id) const {
    const auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
}

std::filesystem::path ImageIndex::resolve(const ImageRecord& record) const {
    const std::filesystem::path p(record.path);
    return p.is_absolute() || root_.empty() ? p : root_ / p;
}

ValidationReport validate_sample(const Sample& sample, const ImageIndex& index, SampleKind kind) {
    ValidationReport report;
    if (sample.id.empty()) {
        report.add("empty id");
    }
    if (sample.messages.empty()) {
        report.add("no messages");
        return report;
    }

    const std::set<std::string> listed(sample.images.begin(), sample.images.end());
    for (const auto& id : sample.images) {
        if (!index.contains(id)) {
            report.add("unresolved image", id);
        }
    }

    std::optional<Role> previous;
    for (std::size_t i = 0; i < sample.messages.size(); ++i) {
        const Message& m = sample.messages[i];
        const std::string where = "message " + std::to_string(i);
        if (m.parts.empty()) {
            report.add("empty parts", where);
        }
        for (const auto& part : m.parts) {
            if (const auto* t = std::get_if<TextPart>(&part); t && t->text.empty()) {
                report.add("empty text part", where);
            }
            if (const auto* r = std::get_if<ImageRef>(&part)) {
                if (m.role == Role::Assistant) {
                    report.add("image in assistant message", where);
                }
                if (!listed.count(r->image_id)) {
                    report.add("image not listed", r->image_id);
                }
                if (!index.contains(r->image_id)) {
                    report.add("unresolved image", r->image_id);
                }
            }
        }

        if (m.role == Role::System) {
            if (i != 0) {
                report.add("misplaced system message", where);
            }
            continue;
        }
        if (!previous) {
            if (m.role != Role::User) {
                report.add("first message not user", where);
            }
        } else if (*previous == m.role) {
            report.add("non-alternating roles", where);
        }
        previous = m.role;
    }

    if (!previous) {
        report.add("no messages", "only a system message");
    } else if (kind == SampleKind::Training && *previous != Role::Assistant) {
        report.add("last message not assistant");
    }
    return report;
}

void to_json(Json& j, const ImageRecord& r) {
    j = Json{{"id", r.id},         {"path", r.path},           {"sha256", r.sha256},
             {"width_px", r.width_px}, {"height_px", r.height_px}, {"source", r.source}};
}

void from_json(const Json& j, ImageRecord& r) {
    j.at("id").get_to(r.id);
    j.at("path").get_to(r.path);
    j.at("sha256").get_to(r.sha256);
    j.at("width_px").get_to(r.width_px);
    j.at("height_px").get_to(r.height_px);
    j.at("source").get_to(r.source);
    if (r.width_px < 1 || r.height_px < 1) {
        throw DataError("image " + r.id + ": non-positive dimensions");
    }
}

void to_json(Json& j, const Message& m) {
    Json parts = Json::array();
    for (const auto& part : m.parts) {
        if (const auto* t = std::get_if<TextPart>(&part)) {
            parts.push_back({{"type", "text"}, {"text", t->text}});
        } else {
            parts.push_back({{"type", "image"}, {"image", std::get<ImageRef>(part).image_id}});
        }
    }
    j = Json{{"role", to_string(m.role)}, {"parts", std::move(parts)}};
}

void from_json(const Json& j, Message& m) {
    m.role = parse_role(j.at("role").get<std::string>());
    m.parts.clear();
    for (const auto& p : j.at("parts")) {
        const auto type = p.at("type").get<std::string>();
        if (type == "text") {
            m.parts.emplace_back(TextPart{p.at("text").get<std::string>()});
        } else if (type == "image") {
            m.parts.emplace_back(ImageRef{p.at("image").get<std::string>()});
        } else {
            throw DataError("unknown part type '" + type + "'");
        }
    }
}

void to_json(Json& j, const Sample& s) {
    j = Json{{"id", s.id},
             {"images", s.images},
             {"label", to_string(s.label)},
             {"generator", s.generator},
             {"source", s.source},
             {"messages", s.messages},
             {"meta", s.meta}};
}

void from_json(const Json& j, Sample& s) {
    j.at("id").get_to(s.id);
    j.at("images").get_to(s.images);
    s.label = parse_label(j.at("label").get<std::string>());
    j.at("generator").get_to(s.generator);
    j.at("source").get_to(s.source);
    j.at("messages").get_to(s.messages);
    s.meta = j.value("meta", std::map<std::string, std::string>{});
}

void to_json(Json& j, const RunManifest& m) {
    j = Json{{"run_id", m.run_id},         {"endpoint_hash", m.endpoint_hash},
             {"model_id", m.model_id},     {"input_hash", m.input_hash},
             {"created_at", m.created_at}, {"status", to_string(m.status)}};
}

void from_json(const Json& j, RunManifest& m) {
    j.at("run_id").get_to(m.run_id);
    j.at("endpoint_hash").get_to(m.endpoint_hash);
    j.at("model_id").get_to(m.model_id);
    j.at("input_hash").get_to(m.input_hash);
    j.at("created_at").get_to(m.created_at);
    m.status = parse_run_status(j.at("status").get<std::string>());
}

}  // namespace forensic
