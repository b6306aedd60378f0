#include "pointbox/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pointbox {

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : detections) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                            [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    return kept;
}

GroundTruth make_ground_truth(std::vector<Pointd> points) {
    GroundTruth gt;
    if (points.size() >= 2) {
        gt.nn_dists = nn_distances(std::span<const Pointd>(points));
    } else {
        gt.nn_dists.assign(points.size(), std::numeric_limits<double>::infinity());
    }
    gt.points = std::move(points);
    return gt;
}

bool size_ok(const Boxd& box, double nn_dist, double r, bool conjunctive) {
    if (std::isinf(r)) {
        return true;
    }
    const double limit = r * nn_dist;
    return conjunctive ? (box.w < limit && box.h < limit) : (box.w < limit || box.h < limit);
}

int good_detection(const Detection& det, const GroundTruth& gt, const std::vector<bool>& matched,
                   const EvalProtocol& protocol) {
    int best = -1;
    double best_dist = 0;
    const Pointd c = det.box.center();
    for (std::size_t g = 0; g < gt.points.size(); ++g) {
        if (matched[g]) {
            continue;
        }
        const double dist = distance(c, gt.points[g]);
        if (dist < protocol.c && size_ok(det.box, gt.nn_dists[g], protocol.r, protocol.conjunctive_size) &&
            (best < 0 || dist < best_dist)) {
            best = static_cast<int>(g);
            best_dist = dist;
        }
    }
    return best;
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> detections) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
    return order;
}

} // namespace

std::vector<int> match_detections(std::span<const Detection> detections, const GroundTruth& gt,
                                  const EvalProtocol& protocol) {
    std::vector<int> result(detections.size(), -1);
    std::vector<bool> matched(gt.points.size(), false);
    for (std::size_t i : score_order(detections)) {
        const int g = good_detection(detections[i], gt, matched, protocol);
        if (g >= 0) {
            matched[static_cast<std::size_t>(g)] = true;
            result[i] = g;
        }
    }
    return result;
}

PrCurve average_precision(std::span<const ImageEval> images, const EvalProtocol& protocol) {
    struct Ranked {
        double score;
        bool good;
    };
    std::vector<Ranked> ranked;
    PrCurve curve;
    EvalProtocol disjunctive = protocol;
    disjunctive.conjunctive_size = false;
    for (const auto& image : images) {
        curve.total_gt += image.gt.points.size();
        const auto matches = match_detections(image.detections, image.gt, protocol);
        for (std::size_t i = 0; i < matches.size(); ++i) {
            ranked.push_back({image.detections[i].score, matches[i] >= 0});
            curve.good += matches[i] >= 0 ? 1 : 0;
        }
        for (int m : match_detections(image.detections, image.gt, disjunctive)) {
            curve.good_disjunctive += m >= 0 ? 1 : 0;
        }
    }
    if (ranked.empty() || curve.total_gt == 0) {
        return curve;
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    std::size_t tp = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        tp += ranked[i].good ? 1 : 0;
        curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(curve.total_gt));
        curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    // Area under the monotone precision envelope.
    double envelope = 0;
    std::vector<double> interp(curve.precision.size());
    for (std::size_t i = curve.precision.size(); i-- > 0;) {
        envelope = std::max(envelope, curve.precision[i]);
        interp[i] = envelope;
    }
    double prev_recall = 0;
    for (std::size_t i = 0; i < interp.size(); ++i) {
        curve.ap += (curve.recall[i] - prev_recall) * interp[i];
        prev_recall = curve.recall[i];
    }
    return curve;
}

CountErrors mae_mse(std::span<const CountPair> counts) {
    CountErrors out;
    if (counts.empty()) {
        return out;
    }
    double abs_sum = 0;
    double sq_sum = 0;
    for (const auto& c : counts) {
        const double e = c.estimate - c.truth;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(counts.size());
    out.mae = abs_sum / n;
    out.mse = std::sqrt(sq_sum / n);
    return out;
}

int game_cell(double v, double extent, int cells) {
    const double width = extent / cells;
    const int cell = static_cast<int>(std::ceil(v / width)) - 1;
    return std::clamp(cell, 0, cells - 1);
}

double game(std::span<const GameInstance> instances, int level) {
    if (instances.empty()) {
        return 0;
    }
    const int cells = 1 << level;
    double total = 0;
    for (const auto& inst : instances) {
        std::vector<long> diff(static_cast<std::size_t>(cells) * cells, 0);
        auto bin = [&](const Pointd& p) {
            return static_cast<std::size_t>(game_cell(p.y, inst.height, cells)) * cells +
                   static_cast<std::size_t>(game_cell(p.x, inst.width, cells));
        };
        for (const auto& p : inst.estimated) {
            ++diff[bin(p)];
        }
        for (const auto& p : inst.truth) {
            --diff[bin(p)];
        }
        long err = 0;
        for (long d : diff) {
            err += std::abs(d);
        }
        total += static_cast<double>(err);
    }
    return total / static_cast<double>(instances.size());
}

} // namespace pointbox
