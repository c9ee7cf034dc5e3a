#include "forensic/prompt.hpp"

#include <algorithm>
#include <cctype>

#include "forensic/error.hpp"
#include "forensic/prompt_data.hpp"

namespace forensic {
namespace {

bool is_placeholder_name(std::string_view name) {
    if (name.empty() || !std::isupper(static_cast<unsigned char>(name.front())) ||
        name.back() == ' ') {
        return false;
    }
    return std::all_of(name.begin(), name.end(), [](unsigned char c) {
        return std::isupper(c) || std::isdigit(c) || c == '_' || c == ' ';
    });
}

}  // namespace

PromptTemplate::PromptTemplate(std::string id, std::string body)
    : id_(std::move(id)), body_(std::move(body)) {
    std::string literal;
    std::size_t pos = 0;
    while (pos < body_.size()) {
        const std::size_t open = body_.find('{', pos);
        if (open == std::string::npos) {
            literal.append(body_, pos, std::string::npos);
            break;
        }
        const std::size_t close = body_.find('}', open + 1);
        if (close == std::string::npos) {
            literal.append(body_, pos, std::string::npos);
            break;
        }
        const std::string_view name(body_.data() + open + 1, close - open - 1);
        if (!is_placeholder_name(name)) {
            literal.append(body_, pos, open + 1 - pos);
            pos = open + 1;
            continue;
        }
        literal.append(body_, pos, open - pos);
        pieces_.push_back({std::move(literal), std::string(name)});
        literal.clear();
        pos = close + 1;
    }
    if (!literal.empty()) {
        pieces_.push_back({std::move(literal), {}});
    }
}

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> out;
    for (const auto& p : pieces_) {
        if (!p.name.empty() && std::find(out.begin(), out.end(), p.name) == out.end()) {
            out.push_back(p.name);
        }
    }
    return out;
}

std::string PromptTemplate::render(const Bindings& bindings) const {
    std::string out;
    for (const auto& seg : render_segments(bindings, {})) {
        out += seg.text;
    }
    return out;
}

std::vector<PromptTemplate::Segment> PromptTemplate::render_segments(
    const Bindings& bindings, const std::set<std::string, std::less<>>& image_slots) const {
    std::vector<Segment> out;
    std::string text;
    for (const auto& piece : pieces_) {
        text += piece.literal;
        if (piece.name.empty()) {
            continue;
        }
        if (image_slots.count(piece.name)) {
            out.push_back({std::move(text), {}});
            out.push_back({{}, piece.name});
            text.clear();
            continue;
        }
        const auto it = bindings.find(piece.name);
        if (it == bindings.end() || it->second.empty()) {
            throw RenderError("template " + id_ + ": unbound placeholder {" + piece.name + "}");
        }
        text += it->second;
    }
    out.push_back({std::move(text), {}});
    std::erase_if(out, [](const Segment& s) { return s.image_slot.empty() && s.text.empty(); });
    return out;
}

namespace prompts {

const PromptTemplate& v1() {
    static const PromptTemplate t("V1", std::string(prompt_data::v1_txt));
    return t;
}

const PromptTemplate& v2() {
    static const PromptTemplate t("V2", std::string(prompt_data::v2_txt));
    return t;
}

const PromptTemplate& v3() {
    static const PromptTemplate t("V3", std::string(prompt_data::v3_txt));
    return t;
}

const PromptTemplate& v3_format() {
    static const PromptTemplate t("V3-format", std::string(prompt_data::v3_format_txt));
    return t;
}

const PromptTemplate& judge() {
    static const PromptTemplate t("judge", std::string(prompt_data::judge_txt));
    return t;
}

std::string_view forensic_system() {
    static const std::string text = trim(prompt_data::v1_system_txt);
    return text;
}

std::string_view v3_system() {
    static const std::string text = trim(prompt_data::v3_system_txt);
    return text;
}

const Json& p1_templates() {
    static const Json j = Json::parse(prompt_data::p1_templates_json);
    return j;
}

const Json& scenarios() {
    static const Json j = Json::parse(prompt_data::scenarios_json);
    return j;
}

const Json& judge_instructions() {
    static const Json j = Json::parse(prompt_data::judge_instructions_json);
    return j;
}

}  // namespace prompts
}  // namespace forensic
