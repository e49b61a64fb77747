#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace leafbench::csv {

using Row = std::vector<std::string>;

// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

// One LF-terminated line.
std::string format_row(const Row& row);

// Parses CSV text (RFC 4180 quoting, LF or CRLF line ends) into rows.
// Throws std::runtime_error on an unterminated quoted field.
std::vector<Row> parse(std::string_view text);

std::vector<Row> read_file(const std::filesystem::path& path);

// Writes header + rows, LF line endings. Throws std::runtime_error when the
// destination cannot be written.
void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows);

} // namespace leafbench::csv
