#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pointbox/geometry.hpp"
#include "pointbox/pseudogt.hpp"

namespace pointbox {

/// Evaluation-side truth, keyed by scene id.
using TruthBoxes = std::map<std::string, std::vector<Boxd>>;

/// |side(pseudo) - side(truth)| / side(truth), side = sqrt(w * h).
double relative_size_error(const Boxd& pseudo, const Boxd& truth);

struct SizeErrorSummary {
    double median_all = 0;
    /// Heads in the bottom third of the image, where crowds are sparse.
    double median_sparse_bottom = 0;
    std::size_t n_all = 0;
    std::size_t n_sparse_bottom = 0;
};

inline constexpr double kSparseBottomFraction = 1.0 / 3.0;

SizeErrorSummary pseudo_size_error(const PseudoStore& pseudo, const TruthBoxes& truth, double image_height);

struct MetricRow {
    std::string protocol;
    std::string metric;
    double value = 0;
};

std::string results_csv(std::span<const MetricRow> rows);
std::vector<MetricRow> read_results_csv(const std::filesystem::path& path);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Line chart with one <polyline> per series.
std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     std::span<const Series> series);

/// Rows: variant -> metric -> value. Columns are the union of metric names.
using VariantTable = std::map<std::string, std::map<std::string, double>>;

std::string variant_table_markdown(const VariantTable& table);
std::string variant_table_csv(const VariantTable& table);

/// Minimal CSV reader: header names -> column of string cells.
std::map<std::string, std::vector<std::string>> read_csv_columns(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace pointbox
