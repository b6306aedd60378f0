#pragma once

#include <limits>
#include <span>
#include <vector>

#include "pointbox/geometry.hpp"

namespace pointbox {

struct EvalProtocol {
    /// Center-distance threshold, pixels.
    double c = 20.0;
    /// Size ratio against the ground truth's nearest-neighbour distance;
    /// infinity disables the size test.
    double r = 1.0;
    double confidence = 0.8;
    double nms_iou = 0.3;
    /// When false, either side below r * d suffices.
    bool conjunctive_size = true;
};

struct Detection {
    Boxd box;
    double score = 0;
};

/// Greedy suppression in descending score (ties keep input order) of any
/// box whose IoU with a kept box exceeds `iou_threshold`.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

struct GroundTruth {
    std::vector<Pointd> points;
    std::vector<double> nn_dists;
};

/// Ground truth with nearest-neighbour distances; a single head gets an
/// infinite distance so only the center test applies to it.
GroundTruth make_ground_truth(std::vector<Pointd> points);

bool size_ok(const Boxd& box, double nn_dist, double r, bool conjunctive);

/// Index of the nearest unmatched ground truth that makes `det` a good
/// detection, or -1.
int good_detection(const Detection& det, const GroundTruth& gt, const std::vector<bool>& matched,
                   const EvalProtocol& protocol);

/// Matches one image's detections in descending score; each ground truth is
/// credited at most once. Result is per detection, in input order.
std::vector<int> match_detections(std::span<const Detection> detections, const GroundTruth& gt,
                                  const EvalProtocol& protocol);

struct ImageEval {
    std::vector<Detection> detections;
    GroundTruth gt;
};

struct PrCurve {
    std::vector<double> recall;
    std::vector<double> precision;
    double ap = 0;
    std::size_t good = 0;
    /// Good detections under the either-side size reading, for comparison.
    std::size_t good_disjunctive = 0;
    std::size_t total_gt = 0;
};

/// Dataset-pooled ranking; all-points interpolated area under the PR curve.
PrCurve average_precision(std::span<const ImageEval> images, const EvalProtocol& protocol);

struct CountErrors {
    double mae = 0;
    /// Root of the mean squared error.
    double mse = 0;
};

struct CountPair {
    double estimate = 0;
    double truth = 0;
};

CountErrors mae_mse(std::span<const CountPair> counts);

struct GameInstance {
    std::vector<Pointd> estimated;
    std::vector<Pointd> truth;
    int width = 0;
    int height = 0;
};

/// Grid cell of a coordinate along one axis; points on an interior cell
/// boundary belong to the lower-index cell.
int game_cell(double v, double extent, int cells);

/// Mean over images of the summed per-cell absolute count error on a
/// 2^L x 2^L grid.
double game(std::span<const GameInstance> instances, int level);

} // namespace pointbox
