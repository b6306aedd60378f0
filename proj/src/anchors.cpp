#include "pointbox/anchors.hpp"

#include <algorithm>
#include <numeric>

#include "pointbox/error.hpp"

namespace pointbox {

void to_json(nlohmann::json& j, const AnchorSpec& spec) {
    j = nlohmann::json{{"scale", spec.scale}, {"aspect", spec.aspect}};
}

void from_json(const nlohmann::json& j, AnchorSpec& spec) {
    spec.scale = j.at("scale").get<double>();
    spec.aspect = j.at("aspect").get<double>();
}

std::vector<double> cluster_scales(std::span<const double> nn_dists, int k) {
    if (k < 1 || nn_dists.size() < static_cast<std::size_t>(k)) {
        throw InsufficientData("cluster_scales needs k >= 1 and at least k distances");
    }
    std::vector<double> data(nn_dists.begin(), nn_dists.end());
    std::sort(data.begin(), data.end());
    const auto n = data.size();

    std::vector<double> centroids(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const auto q = static_cast<std::size_t>((i + 0.5) / k * static_cast<double>(n));
        centroids[static_cast<std::size_t>(i)] = data[std::min(q, n - 1)];
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c) {
                if (std::abs(data[i] - centroids[static_cast<std::size_t>(c)]) <
                    std::abs(data[i] - centroids[static_cast<std::size_t>(best)])) {
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed) {
            break;
        }
        std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
        std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[static_cast<std::size_t>(assign[i])] += data[i];
            ++count[static_cast<std::size_t>(assign[i])];
        }
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            if (count[c] > 0) {
                centroids[c] = sum[c] / static_cast<double>(count[c]);
            }
        }
    }
    std::sort(centroids.begin(), centroids.end());
    return centroids;
}

std::vector<AnchorSpec> build_specs(std::span<const double> scales) {
    std::vector<AnchorSpec> specs;
    specs.reserve(scales.size() * kAnchorAspects.size());
    for (double scale : scales) {
        for (double aspect : kAnchorAspects) {
            specs.push_back({scale, aspect});
        }
    }
    return specs;
}

int layer_stride(int layer) {
    switch (layer) {
    case 1:
        return 8;
    case 2:
        return 16;
    default:
        throw ShapeError("detection layer must be 1 or 2");
    }
}

AnchorGrid build_grid(int width, int height, int layer, std::vector<AnchorSpec> specs) {
    const int stride = layer_stride(layer);
    if (width <= 0 || height <= 0 || width % stride != 0 || height % stride != 0) {
        throw IndivisibleImage("image " + std::to_string(width) + "x" + std::to_string(height) +
                               " is not divisible by stride " + std::to_string(stride));
    }
    return {layer, stride, height / stride, width / stride, std::move(specs)};
}

std::size_t MatchLabels::positive_count() const {
    return static_cast<std::size_t>(std::count_if(label.begin(), label.end(), [](int l) { return l >= 0; }));
}

MatchLabels match(const AnchorGrid& grid, std::span<const Boxd> boxes, MatchThresholds thresholds) {
    const std::size_t n_anchors = grid.size();
    MatchLabels out;
    out.max_iou.assign(n_anchors, 0.0);
    out.box_ignored.assign(boxes.size(), false);
    std::vector<int> argmax(n_anchors, -1);

    double reach_w = 0;
    double reach_h = 0;
    for (const auto& s : grid.specs) {
        reach_w = std::max(reach_w, s.width());
        reach_h = std::max(reach_h, s.height());
    }

    std::vector<double> box_best(boxes.size(), 0.0);
    std::vector<std::size_t> box_best_anchor(boxes.size(), n_anchors);
    const auto per_cell = static_cast<int>(grid.per_cell());
    for (std::size_t g = 0; g < boxes.size(); ++g) {
        const Boxd& b = boxes[g];
        // Only anchors whose centers lie within half the summed extents can overlap.
        const double rx = (reach_w + b.w) / 2;
        const double ry = (reach_h + b.h) / 2;
        const int c0 = std::max(0, static_cast<int>(std::floor((b.cx - rx) / grid.stride - 0.5)));
        const int c1 = std::min(grid.cols - 1, static_cast<int>(std::ceil((b.cx + rx) / grid.stride - 0.5)));
        const int r0 = std::max(0, static_cast<int>(std::floor((b.cy - ry) / grid.stride - 0.5)));
        const int r1 = std::min(grid.rows - 1, static_cast<int>(std::ceil((b.cy + ry) / grid.stride - 0.5)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                for (int t = 0; t < per_cell; ++t) {
                    const std::size_t a = grid.index(r, c, t);
                    const double v = iou(grid.anchor(r, c, t), b);
                    if (v > out.max_iou[a]) {
                        out.max_iou[a] = v;
                        argmax[a] = static_cast<int>(g);
                    }
                    if (v > box_best[g] || (v == box_best[g] && v > 0 && a < box_best_anchor[g])) {
                        box_best[g] = v;
                        box_best_anchor[g] = a;
                    }
                }
            }
        }
    }

    out.label.assign(n_anchors, MatchLabels::kNegative);
    std::vector<bool> has_positive(boxes.size(), false);
    for (std::size_t a = 0; a < n_anchors; ++a) {
        if (out.max_iou[a] >= thresholds.positive) {
            out.label[a] = argmax[a];
            has_positive[static_cast<std::size_t>(argmax[a])] = true;
        } else if (out.max_iou[a] >= thresholds.negative) {
            out.label[a] = MatchLabels::kIgnore;
        }
    }

    std::vector<bool> forced(n_anchors, false);
    for (std::size_t g = 0; g < boxes.size(); ++g) {
        if (has_positive[g]) {
            continue;
        }
        const std::size_t a = box_best_anchor[g];
        if (box_best[g] < thresholds.negative || a == n_anchors || forced[a]) {
            out.box_ignored[g] = true;
            continue;
        }
        forced[a] = true;
        out.label[a] = static_cast<int>(g);
    }
    // A forced anchor may have been taken from a box that owned it only
    // through argmax; that box is ignored if nothing else is left for it.
    std::fill(has_positive.begin(), has_positive.end(), false);
    for (int l : out.label) {
        if (l >= 0) {
            has_positive[static_cast<std::size_t>(l)] = true;
        }
    }
    for (std::size_t g = 0; g < boxes.size(); ++g) {
        if (!has_positive[g]) {
            out.box_ignored[g] = true;
        }
    }
    return out;
}

} // namespace pointbox
