#include "leafbench/csv.hpp"

#include "leafbench/io.hpp"

#include <stdexcept>

namespace leafbench::csv {

std::string escape(std::string_view field)
{
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

std::string format_row(const Row& row)
{
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            line += ',';
        }
        line += escape(row[i]);
    }
    line += '\n';
    return line;
}

std::vector<Row> parse(std::string_view text)
{
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool row_has_content = false;

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            in_quotes = true;
            row_has_content = true;
            break;
        case ',':
            row.push_back(std::move(field));
            field.clear();
            row_has_content = true;
            break;
        case '\r':
            break;
        case '\n':
            if (row_has_content || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            field.clear();
            row.clear();
            row_has_content = false;
            break;
        default:
            field += c;
            row_has_content = true;
        }
    }
    if (in_quotes) {
        throw std::runtime_error("csv: unterminated quoted field");
    }
    if (row_has_content || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<Row> read_file(const std::filesystem::path& path)
{
    return parse(io::read_text(path));
}

void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows)
{
    std::string text = format_row(header);
    for (const auto& row : rows) {
        text += format_row(row);
    }
    io::write_text_atomic(path, text);
}

} // namespace leafbench::csv
