#include "pointbox/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "pointbox/error.hpp"

namespace pointbox {

double relative_size_error(const Boxd& pseudo, const Boxd& truth) {
    const double t = std::sqrt(truth.w * truth.h);
    return std::abs(std::sqrt(pseudo.w * pseudo.h) - t) / t;
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return (lower + upper) / 2;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

SizeErrorSummary pseudo_size_error(const PseudoStore& pseudo, const TruthBoxes& truth, double image_height) {
    std::vector<double> all;
    std::vector<double> bottom;
    for (const auto& [id, entries] : pseudo.all()) {
        auto it = truth.find(id);
        if (it == truth.end() || it->second.size() != entries.size()) {
            throw FormatError("truth boxes missing or misaligned for " + id);
        }
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double e = relative_size_error(entries[i].box, it->second[i]);
            all.push_back(e);
            if (entries[i].point.y >= (1 - kSparseBottomFraction) * image_height) {
                bottom.push_back(e);
            }
        }
    }
    return {median(all), median(bottom), all.size(), bottom.size()};
}

std::string results_csv(std::span<const MetricRow> rows) {
    std::ostringstream os;
    os << "protocol,metric,value\n";
    for (const auto& r : rows) {
        os << r.protocol << ',' << r.metric << ',' << num(r.value) << '\n';
    }
    return os.str();
}

std::map<std::string, std::vector<std::string>> read_csv_columns(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            cells.emplace_back();
        }
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(path.string() + ": empty CSV");
    }
    const auto header = split(line);
    std::map<std::string, std::vector<std::string>> columns;
    for (const auto& h : header) {
        columns[h];
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " cells");
        }
        for (std::size_t i = 0; i < header.size(); ++i) {
            columns[header[i]].push_back(cells[i]);
        }
    }
    return columns;
}

std::vector<MetricRow> read_results_csv(const std::filesystem::path& path) {
    const auto cols = read_csv_columns(path);
    for (const char* key : {"protocol", "metric", "value"}) {
        if (!cols.contains(key)) {
            throw FormatError(path.string() + ": missing column " + key);
        }
    }
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < cols.at("value").size(); ++i) {
        rows.push_back({cols.at("protocol")[i], cols.at("metric")[i], std::stod(cols.at("value")[i])});
    }
    return rows;
}

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     std::span<const Series> series) {
    constexpr double width = 640;
    constexpr double height = 420;
    constexpr double left = 60;
    constexpr double right = 150;
    constexpr double top = 40;
    constexpr double bottom = 50;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    double x0 = std::numeric_limits<double>::infinity();
    double x1 = -x0;
    double y0 = x0;
    double y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
        }
    }
    if (!std::isfinite(x0)) {
        x0 = y0 = 0;
        x1 = y1 = 1;
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"24\" font-size=\"16\">" << title << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" font-size=\"12\" text-anchor=\"middle\">"
       << x_label << "</text>\n";
    os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << top + ph / 2
       << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + ph << "\" font-size=\"10\" text-anchor=\"end\">" << num(y0)
       << "</text>\n";
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + 10 << "\" font-size=\"10\" text-anchor=\"end\">" << num(y1)
       << "</text>\n";
    os << "<text x=\"" << left << "\" y=\"" << top + ph + 14 << "\" font-size=\"10\">" << num(x0) << "</text>\n";
    os << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 14 << "\" font-size=\"10\" text-anchor=\"end\">"
       << num(x1) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = palette[k % std::size(palette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
            }
        }
        os << "\"/>\n";
        os << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 + 16 * static_cast<double>(k)
           << "\" font-size=\"12\" fill=\"" << color << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

std::vector<std::string> metric_columns(const VariantTable& table) {
    std::set<std::string> names;
    for (const auto& [variant, metrics] : table) {
        for (const auto& [name, value] : metrics) {
            names.insert(name);
        }
    }
    return {names.begin(), names.end()};
}

} // namespace

std::string variant_table_markdown(const VariantTable& table) {
    const auto columns = metric_columns(table);
    std::ostringstream os;
    os << "| variant |";
    for (const auto& c : columns) os << ' ' << c << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& [variant, metrics] : table) {
        os << "| " << variant << " |";
        for (const auto& c : columns) {
            auto it = metrics.find(c);
            os << ' ' << (it == metrics.end() ? std::string("-") : num(it->second)) << " |";
        }
        os << '\n';
    }
    return os.str();
}

std::string variant_table_csv(const VariantTable& table) {
    const auto columns = metric_columns(table);
    std::ostringstream os;
    os << "variant";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (const auto& [variant, metrics] : table) {
        os << variant;
        for (const auto& c : columns) {
            auto it = metrics.find(c);
            os << ',' << (it == metrics.end() ? std::string() : num(it->second));
        }
        os << '\n';
    }
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write: " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

} // namespace pointbox
