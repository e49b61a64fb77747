#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace leafbench::io {

std::string read_text(const std::filesystem::path& path);

// Writes through a sibling temp file and renames, creating parent directories.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

// Appends one line (a trailing LF is added) and flushes.
void append_line(const std::filesystem::path& path, std::string_view line);

// Reads a JSON-lines file. An unterminated last line, or a last line that fails
// to parse, is a torn write and is dropped; a malformed line anywhere else
// throws std::runtime_error. append_line truncates the same torn tail.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

// Serializes with ", " and ": " separators and ASCII escaping, the layout
// Python's json.dumps produces by default. Object keys keep insertion order
// when given an ordered_json.
std::string dump_spaced(const nlohmann::ordered_json& value);

} // namespace leafbench::io
