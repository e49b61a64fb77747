#include "leafbench/io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace leafbench::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_atomic(const fs::path& path, std::string_view text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + path.string());
        }
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) {
            throw std::runtime_error("short write to " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw std::runtime_error("cannot write " + path.string() + ": " + ec.message());
    }
}

namespace {

// A crash mid-append leaves a fragment without its newline; cut it off so the
// next record starts on a fresh line.
void drop_torn_tail(const fs::path& path)
{
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec || size == 0) {
        return;
    }
    std::ifstream in(path, std::ios::binary);
    in.seekg(-1, std::ios::end);
    if (in.get() == '\n') {
        return;
    }
    in.seekg(0);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto keep = text.rfind('\n');
    in.close();
    fs::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

} // namespace

void append_line(const fs::path& path, std::string_view line)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    drop_torn_tail(path);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) {
        throw std::runtime_error("cannot append to " + path.string());
    }
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.put('\n');
    out.flush();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path)
{
    std::vector<nlohmann::json> out;
    if (!fs::exists(path)) {
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (in.eof()) {
            break; // unterminated, so torn
        }
        if (!line.empty()) {
            lines.push_back(std::move(line));
        }
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto value = nlohmann::json::parse(lines[i], nullptr, false);
        if (value.is_discarded()) {
            if (i + 1 == lines.size()) {
                break;
            }
            throw std::runtime_error(path.string() + ": malformed line " + std::to_string(i + 1));
        }
        out.push_back(std::move(value));
    }
    return out;
}

namespace {

void dump_into(const nlohmann::ordered_json& value, std::string& out)
{
    if (value.is_object()) {
        out += '{';
        bool first = true;
        for (const auto& [key, item] : value.items()) {
            if (!first) {
                out += ", ";
            }
            first = false;
            out += nlohmann::ordered_json(key).dump(-1, ' ', true);
            out += ": ";
            dump_into(item, out);
        }
        out += '}';
    } else if (value.is_array()) {
        out += '[';
        bool first = true;
        for (const auto& item : value) {
            if (!first) {
                out += ", ";
            }
            first = false;
            dump_into(item, out);
        }
        out += ']';
    } else {
        out += value.dump(-1, ' ', true);
    }
}

} // namespace

std::string dump_spaced(const nlohmann::ordered_json& value)
{
    std::string out;
    dump_into(value, out);
    return out;
}

} // namespace leafbench::io
