#pragma once

// Small UTF-8 helpers shared by the corpus tools and the text frontend.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace abtts::text {

/// Byte length of the whitespace character at s[i] (ASCII blanks, no-break
/// and narrow no-break spaces, thin space), or 0.
std::size_t space_len(std::string_view s, std::size_t i);
std::size_t skip_space(std::string_view s, std::size_t i);
/// [b, e) with whitespace removed from both ends.
std::pair<std::size_t, std::size_t> trim_range(std::string_view s, std::size_t b, std::size_t e);
std::string trim(std::string_view s);
/// Collapses whitespace runs to one ASCII space and trims.
std::string collapse_space(std::string_view s);

std::size_t codepoint_count(std::string_view s);
/// Code points that are not whitespace.
std::size_t visible_count(std::string_view s);

std::u32string to_u32(std::string_view s);
std::string to_utf8(std::u32string_view s);
std::string to_utf8(char32_t c);

char32_t lower(char32_t c);
std::string to_lower(std::string_view s);
bool is_letter(char32_t c);
bool is_upper(char32_t c);
bool is_vowel_letter(char32_t c);

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace abtts::text
