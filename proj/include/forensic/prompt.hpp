#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "forensic/json_util.hpp"

namespace forensic {

using Bindings = std::map<std::string, std::string, std::less<>>;

// Text with {NAME} placeholders. Names are upper-case words (spaces allowed,
// e.g. {SEED ANNOTATION}); any other brace text is literal, so JSON examples
// inside a template survive rendering untouched.
class PromptTemplate {
public:
    struct Segment {
        std::string text;
        std::string image_slot;  // non-empty: an image goes here instead of text
    };

    PromptTemplate(std::string id, std::string body);

    const std::string& id() const { return id_; }
    const std::string& body() const { return body_; }

    // Distinct placeholder names in order of first appearance.
    std::vector<std::string> placeholders() const;

    // Throws RenderError if a placeholder is unbound or bound to an empty string.
    std::string render(const Bindings& bindings) const;

    // Like render(), but placeholders listed in `image_slots` split the output
    // into separate segments so an image can be attached at that position.
    std::vector<Segment> render_segments(const Bindings& bindings,
                                         const std::set<std::string, std::less<>>& image_slots) const;

private:
    struct Piece {
        std::string literal;
        std::string name;  // placeholder name; empty for a literal piece
    };

    std::string id_;
    std::string body_;
    std::vector<Piece> pieces_;
};

// Versioned templates and pools shipped under data/prompts.
namespace prompts {

inline constexpr std::string_view kVersion = "prompts-v1";

const PromptTemplate& v1();
const PromptTemplate& v2();
const PromptTemplate& v3();
const PromptTemplate& v3_format();
const PromptTemplate& judge();

// System preamble shared by V1 and V2.
std::string_view forensic_system();
std::string_view v3_system();

const Json& p1_templates();
const Json& scenarios();
const Json& judge_instructions();

}  // namespace prompts
}  // namespace forensic
