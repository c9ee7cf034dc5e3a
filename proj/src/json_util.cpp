#include "forensic/json_util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

#include "forensic/error.hpp"

namespace forensic {
namespace {

void check_finite(const Json& value) {
    if (value.is_number_float() && !std::isfinite(value.get<double>())) {
        throw DataError("canonical JSON: non-finite number");
    }
    if (value.is_structured()) {
        for (const auto& child : value) {
            check_finite(child);
        }
    }
}

// Index one past the bracket matching text[open], honoring JSON strings.
std::optional<std::size_t> match_bracket(std::string_view text, std::size_t open) {
    const char opener = text[open];
    const char closer = opener == '[' ? ']' : '}';
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[' || c == '{') {
            ++depth;
        } else if (c == ']' || c == '}') {
            --depth;
            if (depth == 0) {
                return c == closer ? std::optional<std::size_t>(i + 1) : std::nullopt;
            }
        }
    }
    return std::nullopt;
}

// Bodies of ``` fenced blocks, in order. The info string (e.g. "json") is skipped.
std::vector<std::string_view> fenced_blocks(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t open = text.find("```", pos);
        if (open == std::string_view::npos) {
            break;
        }
        const std::size_t line_end = text.find('\n', open);
        if (line_end == std::string_view::npos) {
            break;
        }
        const std::size_t close = text.find("```", line_end);
        if (close == std::string_view::npos) {
            break;
        }
        out.push_back(text.substr(line_end + 1, close - line_end - 1));
        pos = close + 3;
    }
    return out;
}

std::optional<Json> extract_first(std::string_view text, char opener) {
    for (std::string_view block : fenced_blocks(text)) {
        Json parsed = Json::parse(block, nullptr, false);
        if (!parsed.is_discarded() && (opener == '[' ? parsed.is_array() : parsed.is_object())) {
            return parsed;
        }
    }
    for (std::size_t pos = text.find(opener); pos != std::string_view::npos;
         pos = text.find(opener, pos + 1)) {
        const auto end = match_bracket(text, pos);
        if (!end) {
            continue;
        }
        Json parsed = Json::parse(text.substr(pos, *end - pos), nullptr, false);
        if (!parsed.is_discarded()) {
            return parsed;
        }
    }
    return std::nullopt;
}

}  // namespace

std::string canonical_dump(const Json& value) {
    check_finite(value);
    try {
        return value.dump(-1, ' ', false, Json::error_handler_t::strict);
    } catch (const Json::type_error& e) {
        throw DataError(std::string("canonical JSON: ") + e.what());
    }
}

std::optional<Json> extract_first_json_array(std::string_view text) {
    return extract_first(text, '[');
}

std::optional<Json> extract_first_json_object(std::string_view text) {
    return extract_first(text, '{');
}

std::string trim(std::string_view text) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && is_space(static_cast<unsigned char>(text[b]))) {
        ++b;
    }
    while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) {
        --e;
    }
    return std::string(text.substr(b, e - b));
}

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace forensic
