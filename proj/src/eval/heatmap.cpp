#include "leafbench/eval.hpp"

#include "leafbench/csv.hpp"
#include "leafbench/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace leafbench::eval {

namespace {

std::string xml_escape(std::string_view text)
{
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

// White at t = 0, deep blue at t = 1.
std::string shade(double t)
{
    const auto mix = [t](int full) { return static_cast<int>(std::lround(255.0 + (full - 255.0) * t)); };
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", mix(33), mix(102), mix(172));
    return buf;
}

} // namespace

std::string heatmap_csv(const ConfusionMatrix& cm)
{
    csv::Row header{"true_label"};
    header.insert(header.end(), cm.classes.begin(), cm.classes.end());
    header.push_back("unparseable");
    std::string text = csv::format_row(header);
    for (std::size_t r = 0; r < cm.size(); ++r) {
        csv::Row row{cm.classes[r]};
        for (long c : cm.counts[r]) {
            row.push_back(std::to_string(c));
        }
        text += csv::format_row(row);
    }
    return text;
}

ConfusionMatrix parse_heatmap_csv(std::string_view text)
{
    const auto rows = csv::parse(text);
    if (rows.empty() || rows[0].size() < 3 || rows[0].front() != "true_label" || rows[0].back() != "unparseable") {
        throw EvalError("heatmap CSV has an unexpected header");
    }
    auto cm = empty_matrix(std::vector<std::string>(rows[0].begin() + 1, rows[0].end() - 1));
    if (rows.size() != cm.size() + 1) {
        throw EvalError("heatmap CSV needs one row per class");
    }
    for (std::size_t r = 0; r < cm.size(); ++r) {
        const auto& row = rows[r + 1];
        if (row.size() != cm.size() + 2 || row[0] != cm.classes[r]) {
            throw EvalError("heatmap CSV row " + std::to_string(r + 2) + " does not match the header");
        }
        for (std::size_t c = 0; c <= cm.size(); ++c) {
            try {
                std::size_t used = 0;
                cm.counts[r][c] = std::stol(row[c + 1], &used);
                if (used != row[c + 1].size() || cm.counts[r][c] < 0) {
                    throw EvalError("bad count");
                }
            } catch (const std::exception&) {
                throw EvalError("heatmap CSV row " + std::to_string(r + 2) + " has a bad count '" + row[c + 1] + "'");
            }
        }
    }
    return cm;
}

std::string heatmap_svg(const ConfusionMatrix& cm, std::string_view title)
{
    const int cell = 64;
    const int left = 180;
    const int top = 110;
    const int right = 80;
    const int k = static_cast<int>(cm.size());
    const int width = left + (k + 1) * cell + right;
    const int height = top + k * cell + 20;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    if (!title.empty()) {
        svg += "<text class=\"title\" x=\"" + std::to_string(width / 2) +
               "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
    }
    for (int c = 0; c <= k; ++c) {
        const std::string label = c < k ? cm.classes[static_cast<std::size_t>(c)] : "unparseable";
        const int x = left + c * cell + cell / 2;
        svg += "<text class=\"col-label\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(top - 8) +
               "\" transform=\"rotate(-35 " + std::to_string(x) + " " + std::to_string(top - 8) + ")\">" +
               xml_escape(label) + "</text>\n";
    }
    svg += "<text x=\"" + std::to_string(width - right + 10) + "\" y=\"" + std::to_string(top - 8) +
           "\">total</text>\n";

    for (int r = 0; r < k; ++r) {
        const auto& row = cm.counts[static_cast<std::size_t>(r)];
        const long row_max = *std::max_element(row.begin(), row.end());
        const int y = top + r * cell;
        svg += "<text class=\"row-label\" x=\"" + std::to_string(left - 8) + "\" y=\"" +
               std::to_string(y + cell / 2 + 4) + "\" text-anchor=\"end\">" +
               xml_escape(cm.classes[static_cast<std::size_t>(r)]) + "</text>\n";
        for (int c = 0; c <= k; ++c) {
            const long count = row[static_cast<std::size_t>(c)];
            const double t = row_max > 0 ? static_cast<double>(count) / static_cast<double>(row_max) : 0.0;
            const int x = left + c * cell;
            svg += "<rect class=\"cell\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                   std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + shade(t) +
                   "\" stroke=\"#cccccc\"/>\n";
            svg += "<text class=\"count\" x=\"" + std::to_string(x + cell / 2) + "\" y=\"" +
                   std::to_string(y + cell / 2 + 4) + "\" text-anchor=\"middle\" fill=\"" +
                   (t > 0.6 ? "#ffffff" : "#000000") + "\">" + std::to_string(count) + "</text>\n";
        }
        svg += "<text class=\"row-sum\" x=\"" + std::to_string(width - right + 10) + "\" y=\"" +
               std::to_string(y + cell / 2 + 4) + "\">" + std::to_string(cm.row_sum(static_cast<std::size_t>(r))) +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

void emit_heatmap(const ConfusionMatrix& cm, const std::filesystem::path& svg_path,
                  const std::filesystem::path& csv_path, std::string_view title)
{
    if (cm.size() == 0 || cm.counts.size() != cm.size()) {
        throw EvalError("malformed confusion matrix");
    }
    io::write_text_atomic(svg_path, heatmap_svg(cm, title));
    io::write_text_atomic(csv_path, heatmap_csv(cm));
}

} // namespace leafbench::eval
