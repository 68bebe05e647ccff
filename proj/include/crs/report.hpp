#pragma once
#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crs/binio.hpp"
#include "crs/errors.hpp"
#include "crs/model.hpp"

namespace crs {

// ---------------------------------------------------------------------------
// Ablation report rows and the mode,seed,ari,inference_seconds CSV schema.
// ---------------------------------------------------------------------------

struct AblateRow {
    ConsistencyMode mode = ConsistencyMode::ST;
    std::uint64_t seed = 0;
    double ari = 0.0;
    double inference_seconds = 0.0;
    /// Fraction of objects whose identity survives the blanked slice
    /// (kept out of the CSV; the schema above is fixed).
    double identity_preserved = 0.0;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline void write_report_csv(const std::string& path, const std::vector<AblateRow>& rows) {
    std::string out = "mode,seed,ari,inference_seconds\n";
    for (const auto& r : rows)
        out += to_string(r.mode) + "," + std::to_string(r.seed) + "," + format_double(r.ari) + "," +
               format_double(r.inference_seconds) + "\n";
    write_file_bytes(path, out);
}

struct ReportTable {
    std::vector<AblateRow> rows;
};

/// Parses the ablation CSV; complains with the offending line number and
/// names any missing column.
inline ReportTable parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw parse_error("report CSV is empty (line 1)");
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    };
    const auto header = split(line);
    const std::vector<std::string> want = {"mode", "seed", "ari", "inference_seconds"};
    std::vector<int> col(want.size(), -1);
    for (std::size_t w = 0; w < want.size(); ++w) {
        for (std::size_t h = 0; h < header.size(); ++h)
            if (header[h] == want[w]) col[w] = static_cast<int>(h);
        if (col[w] < 0) throw parse_error("report CSV is missing column '" + want[w] + "' (line 1)");
    }
    ReportTable table;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line);
        if (cells.size() < header.size())
            throw parse_error("report CSV row has " + std::to_string(cells.size()) +
                              " cells, expected " + std::to_string(header.size()) + " (line " +
                              std::to_string(line_no) + ")");
        AblateRow r;
        try {
            r.mode = parse_mode(cells[static_cast<std::size_t>(col[0])]);
            r.seed = std::stoull(cells[static_cast<std::size_t>(col[1])]);
            r.ari = std::stod(cells[static_cast<std::size_t>(col[2])]);
            r.inference_seconds = std::stod(cells[static_cast<std::size_t>(col[3])]);
        } catch (const mode_error& e) {
            throw parse_error(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
        } catch (const std::exception&) {
            throw parse_error("report CSV has a malformed number (line " + std::to_string(line_no) +
                              ")");
        }
        table.rows.push_back(r);
    }
    return table;
}

/// Published full-scale reference ARI per mode, annotated on charts for
/// orientation; desk-scale runs are not expected to reach these magnitudes.
inline const std::map<ConsistencyMode, double>& reference_ari() {
    static const std::map<ConsistencyMode, double> kRef = {
        {ConsistencyMode::ST, 0.13},
        {ConsistencyMode::STL, 0.082},
        {ConsistencyMode::STN, 0.045},
        {ConsistencyMode::STC, 0.035},
    };
    return kRef;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw metric_error("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else if (c == '&')
            out += "&amp;";
        else
            out += c;
    }
    return out;
}

} // namespace detail

/// Deterministic bar chart of one value per mode with optional per-mode
/// reference markers. Byte-for-byte identical output for identical input.
inline std::string render_bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                                    const std::string& title,
                                    const std::map<std::string, double>& reference = {}) {
    if (bars.empty()) throw parse_error("render_bar_chart: nothing to draw");
    const int width = 480, height = 320, margin = 48;
    double peak = 1e-9;
    for (const auto& [name, v] : bars) peak = std::max(peak, v);
    for (const auto& [name, v] : reference) peak = std::max(peak, v);
    peak *= 1.15;

    std::string svg;
    char buf[256];
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" "
           "viewBox=\"0 0 480 320\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"480\" height=\"320\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"24\" font-family=\"monospace\" font-size=\"14\">%s</text>\n",
                  margin, detail::svg_escape(title).c_str());
    svg += buf;
    const int plot_w = width - 2 * margin;
    const int plot_h = height - 2 * margin - 16;
    const int base_y = height - margin;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  base_y, width - margin, base_y);
    svg += buf;
    const double slot = static_cast<double>(plot_w) / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double bar_w = slot * 0.55;
        const double x = margin + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
        const double h = plot_h * (bars[i].second / peak);
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                      "fill=\"#4878a8\"/>\n",
                      x, base_y - h, bar_w, h);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.2f\" y=\"%d\" font-family=\"monospace\" font-size=\"12\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      x + bar_w / 2.0, base_y + 16, detail::svg_escape(bars[i].first).c_str());
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.2f\" y=\"%.2f\" font-family=\"monospace\" font-size=\"11\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      x + bar_w / 2.0, base_y - h - 4.0, format_double(bars[i].second).c_str());
        svg += buf;
        auto ref = reference.find(bars[i].first);
        if (ref != reference.end()) {
            const double ry = base_y - plot_h * (ref->second / peak);
            std::snprintf(buf, sizeof(buf),
                          "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#c03028\" "
                          "stroke-dasharray=\"4 3\"/>\n",
                          x - 6.0, ry, x + bar_w + 6.0, ry);
            svg += buf;
        }
    }
    if (!reference.empty()) {
        std::string note = "reference:";
        for (const auto& [name, v] : reference) note += " " + name + " " + format_double(v);
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"11\" "
                      "fill=\"#c03028\">%s</text>\n",
                      margin, margin - 6, detail::svg_escape(note).c_str());
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

/// Renders the ablation charts (median ARI and median inference seconds per
/// mode) from parsed rows. Modes appear in canonical order.
inline std::vector<std::pair<std::string, std::string>> render_report_charts(
    const ReportTable& table) {
    if (table.rows.empty()) throw parse_error("report has no data rows");
    const ConsistencyMode order[] = {ConsistencyMode::ST, ConsistencyMode::STL, ConsistencyMode::STN,
                                     ConsistencyMode::STC};
    std::vector<std::pair<std::string, double>> ari_bars, sec_bars;
    std::map<std::string, double> ref;
    for (ConsistencyMode mode : order) {
        std::vector<double> aris, secs;
        for (const auto& r : table.rows)
            if (r.mode == mode) {
                aris.push_back(r.ari);
                secs.push_back(r.inference_seconds);
            }
        if (aris.empty()) continue;
        ari_bars.emplace_back(to_string(mode), median(aris));
        sec_bars.emplace_back(to_string(mode), median(secs));
        ref[to_string(mode)] = reference_ari().at(mode);
    }
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("ari_median.svg",
                       render_bar_chart(ari_bars, "median adapted Rand error per mode", ref));
    files.emplace_back("inference_seconds.svg",
                       render_bar_chart(sec_bars, "median inference seconds per mode"));
    return files;
}

} // namespace crs
