// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace prime::text {

/// Lowercased Unicode words (UAX #29 word boundaries, letters and numbers
/// only). No stemming, no stopword removal.
std::vector<std::string> tokenize(std::string_view utf8);

std::string_view trim(std::string_view s);

/// ASCII case-insensitive substring search.
bool contains_icase(std::string_view haystack, std::string_view needle);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// First max_tokens whitespace-delimited tokens, original spacing kept.
/// Sets truncated when something was cut.
std::string truncate_tokens(std::string_view s, std::size_t max_tokens, bool& truncated);

std::size_t count_tokens(std::string_view s);

/// Filesystem-safe name: [A-Za-z0-9_-] kept, every other byte as %XX.
std::string path_component(std::string_view s);

}  // namespace prime::text
