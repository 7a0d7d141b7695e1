#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ctq {

// UTF-8 helpers. Invalid byte sequences decode to U+FFFD one byte at a time.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

bool is_unicode_space(char32_t c);
bool is_unicode_punct(char32_t c);

/// Simple (one-to-one) lowercase mapping for Latin, Latin-1/Extended-A,
/// Greek and Cyrillic. Other scripts are returned unchanged.
char32_t to_lower(char32_t c);

std::string trim(std::string_view text);

/// Trims and collapses every internal whitespace run into one ASCII space.
std::string normalize_whitespace(std::string_view text);

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
std::vector<std::string> tokenize_for_retrieval(std::string_view text);

/// Number of maximal non-whitespace runs.
std::size_t token_count(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);

/// 64-bit FNV-1a over the raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::string_view text);

std::string to_hex(std::uint64_t value);

/// Shortest decimal that round-trips a double.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace ctq
