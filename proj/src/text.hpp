#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lrmt::text {

// Decodes UTF-8 into codepoints. Returns false and sets *bad_byte to the
// offset of the first invalid byte on malformed input.
bool utf8_decode(std::string_view s, std::vector<char32_t>& out, std::size_t* bad_byte = nullptr);

void utf8_append(std::string& out, char32_t cp);
std::string utf8_encode(const std::vector<char32_t>& cps);

// Splits a string into single-codepoint UTF-8 chunks. Input must be valid UTF-8.
std::vector<std::string> utf8_chars(std::string_view s);

// Lowercases the algorithmic Unicode ranges (ASCII, Latin-1, Latin Extended-A,
// Greek, Cyrillic); other codepoints pass through.
char32_t lower_codepoint(char32_t cp);
std::string lowercase(std::string_view s);

bool is_space(char32_t cp);

// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view s);

// Lowercase + whitespace normalization, the canonical form scored by metrics.
std::string normalize_for_eval(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);

}  // namespace lrmt::text
