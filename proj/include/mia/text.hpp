#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mia::text {

struct CodePoint {
    char32_t value;
    std::size_t offset;  // byte offset of the first code unit
    std::size_t length;  // bytes
};

// Lenient UTF-8 decoder: invalid bytes decode as U+FFFD of length 1.
std::vector<CodePoint> decode_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);

bool is_space(char32_t cp);
// Ideographs and syllabic scripts that are segmented one code point per token.
bool is_cjk(char32_t cp);
bool is_punct(char32_t cp);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_icase(std::string_view s, std::string_view prefix);

// Replaces every occurrence of `from` with `to`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

}  // namespace mia::text
