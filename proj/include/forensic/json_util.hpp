#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace forensic {

using Json = nlohmann::json;

// Compact JSON with object keys sorted (nlohmann's default object is a
// std::map). Throws DataError on non-finite numbers or invalid UTF-8.
std::string canonical_dump(const Json& value);

// Returns the first JSON array embedded in free-form text, tolerating
// surrounding prose and markdown code fences. std::nullopt if none parses.
std::optional<Json> extract_first_json_array(std::string_view text);

// Same idea for a top-level object.
std::optional<Json> extract_first_json_object(std::string_view text);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);

}  // namespace forensic
