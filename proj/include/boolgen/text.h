#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace boolgen {

// Token normalization shared by the index, the brute-force matcher, and the
// query side: ASCII-lowercase, split on anything that is not alphanumeric or
// a hyphen, then strip leading/trailing hyphens. Bytes >= 0x80 are kept as
// word characters so UTF-8 words survive intact.
std::vector<std::string> normalize_tokens(std::string_view text);

// Lowercase, trim, and collapse internal whitespace. Used for exact heading
// and publication-type comparisons.
std::string normalize_heading(std::string_view text);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);
bool starts_with(std::string_view text, std::string_view prefix);

}  // namespace boolgen
