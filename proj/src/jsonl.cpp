#include "forensic/jsonl.hpp"

#include <algorithm>

namespace forensic {

std::string to_jsonl(const std::vector<Sample>& samples) {
    return dump_jsonl(samples);
}

JsonlParse<Sample> from_jsonl(std::string_view bytes, ParseMode mode) {
    return parse_jsonl<Sample>(bytes, mode);
}

std::string input_hash(std::vector<Sample> samples) {
    // Ties on id fall back to the serialized bytes so duplicates hash the same
    // in any order.
    std::vector<std::pair<std::string, std::string>> keyed;
    keyed.reserve(samples.size());
    for (const auto& s : samples) {
        keyed.emplace_back(s.id, canonical_dump(Json(s)));
    }
    std::sort(keyed.begin(), keyed.end());
    std::string joined;
    for (const auto& [id, line] : keyed) {
        joined += line;
        joined += '\n';
    }
    return sha256_hex(joined);
}

}  // namespace forensic
