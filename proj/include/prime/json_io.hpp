// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace prime {

/// Insertion-ordered JSON. Every file the engine writes uses it so key order
/// is fixed by the serializer code and outputs are byte-reproducible.
using Json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// One compact JSON value per line, each terminated by '\n'.
std::string to_jsonl(const std::vector<Json>& rows);

/// Parses every nonblank line. Throws FormatError naming the line on failure.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// Pretty JSON with 2-space indent and a trailing newline.
std::string dump_pretty(const Json& j);

}  // namespace prime
