#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "pointbox/geometry.hpp"

namespace pointbox {

inline constexpr int kAnchorsPerCell = 25;
inline constexpr std::array<double, 5> kAnchorAspects = {0.5, 0.75, 1.0, 1.33, 2.0};

/// Reference box shape: `scale` is the square root of the area, `aspect` is w/h.
struct AnchorSpec {
    double scale = 1;
    double aspect = 1;

    double width() const { return scale * std::sqrt(aspect); }
    double height() const { return scale / std::sqrt(aspect); }

    friend bool operator==(const AnchorSpec&, const AnchorSpec&) = default;
};

void to_json(nlohmann::json& j, const AnchorSpec& spec);
void from_json(const nlohmann::json& j, AnchorSpec& spec);

/// 1-D Lloyd k-means over nearest-neighbour distances. Centroids start at the
/// k quantile midpoints of the sorted data and are returned ascending.
std::vector<double> cluster_scales(std::span<const double> nn_dists, int k);

/// Cross product of `scales` with kAnchorAspects, scale-major.
std::vector<AnchorSpec> build_specs(std::span<const double> scales);

int layer_stride(int layer);

/// Anchors tiled on one detection layer's feature grid, in image pixels.
/// Flat anchor index = (row * cols + col) * specs.size() + t.
struct AnchorGrid {
    int layer = 1;
    int stride = 8;
    int rows = 0;
    int cols = 0;
    std::vector<AnchorSpec> specs;

    std::size_t per_cell() const { return specs.size(); }
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols * specs.size(); }
    std::size_t index(int row, int col, int t) const {
        return (static_cast<std::size_t>(row) * cols + col) * specs.size() + t;
    }
    Boxd anchor(int row, int col, int t) const {
        const auto& s = specs[static_cast<std::size_t>(t)];
        return {(col + 0.5) * stride, (row + 0.5) * stride, s.width(), s.height()};
    }
    Boxd anchor(std::size_t flat) const {
        const auto t = static_cast<int>(flat % specs.size());
        const auto cell = flat / specs.size();
        return anchor(static_cast<int>(cell / cols), static_cast<int>(cell % cols), t);
    }
};

AnchorGrid build_grid(int width, int height, int layer, std::vector<AnchorSpec> specs);

struct MatchThresholds {
    double positive = 0.7;
    double negative = 0.3;
};

struct MatchLabels {
    static constexpr int kNegative = -1;
    static constexpr int kIgnore = -2;

    /// Per anchor: matched box index (positive), kNegative or kIgnore.
    std::vector<int> label;
    std::vector<double> max_iou;
    /// Per box: true when it ended up without any positive anchor.
    std::vector<bool> box_ignored;

    std::size_t positive_count() const;
};

/// IoU labelling of every grid anchor against `boxes`. A box that owns no
/// positive but reaches IoU >= thresholds.negative with some anchor has its
/// best anchor forced positive; below that it is ignored.
MatchLabels match(const AnchorGrid& grid, std::span<const Boxd> boxes, MatchThresholds thresholds = {});

} // namespace pointbox
