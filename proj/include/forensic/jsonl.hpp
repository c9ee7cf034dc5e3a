#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "forensic/json_util.hpp"
#include "forensic/schema.hpp"

namespace forensic {

enum class ParseMode { Strict, Lenient };

struct LineError {
    std::size_t line = 0;  // 1-based
    std::string message;
};

class JsonlError : public DataError {
public:
    JsonlError(std::size_t line, const std::string& message)
        : DataError("line " + std::to_string(line) + ": " + message), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

template <typename T>
struct JsonlParse {
    std::vector<T> items;
    std::vector<LineError> errors;
};

// One JSON value per LF-terminated line; blank lines are skipped. Strict mode
// throws on the first bad line, lenient mode records it and continues.
template <typename T>
JsonlParse<T> parse_jsonl(std::string_view bytes, ParseMode mode = ParseMode::Strict) {
    JsonlParse<T> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        std::size_t end = bytes.find('\n', pos);
        if (end == std::string_view::npos) {
            end = bytes.size();
        }
        ++line_no;
        const std::string_view line = bytes.substr(pos, end - pos);
        pos = end + 1;
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.items.push_back(Json::parse(line).get<T>());
        } catch (const std::exception& e) {
            if (mode == ParseMode::Strict) {
                throw JsonlError(line_no, e.what());
            }
            out.errors.push_back({line_no, e.what()});
        }
    }
    return out;
}

template <typename T>
std::string dump_jsonl(const std::vector<T>& items) {
    std::string out;
    for (const auto& item : items) {
        out += canonical_dump(Json(item));
        out += '\n';
    }
    return out;
}

std::string to_jsonl(const std::vector<Sample>& samples);
JsonlParse<Sample> from_jsonl(std::string_view bytes, ParseMode mode = ParseMode::Strict);

template <typename T>
JsonlParse<T> read_jsonl_file(const std::filesystem::path& path, ParseMode mode = ParseMode::Strict) {
    return parse_jsonl<T>(read_file_bytes(path), mode);
}

// Content hash of a sample set; invariant under reordering (sorted by id).
std::string input_hash(std::vector<Sample> samples);

}  // namespace forensic
