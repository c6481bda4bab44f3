#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace bgps::text {

// ASCII lowercase with every ASCII punctuation character turned into a space.
// Non-ASCII bytes are kept as word characters.
std::string normalize(std::string_view s);

// normalize() then split on whitespace.
std::vector<std::string> words(std::string_view s);

// English function words dropped by default from word statistics.
const std::set<std::string, std::less<>> & default_stop_words();

// RFC-4180 field quoting.
std::string csv_field(std::string_view s);

}  // namespace bgps::text
