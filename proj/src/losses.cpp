#include "pointbox/losses.hpp"

#include <algorithm>
#include <cmath>

namespace pointbox {

int grid_row(double cy, int grid_rows, int stride) {
    const int row = static_cast<int>(std::floor(cy / stride));
    return std::clamp(row, 0, grid_rows - 1);
}

std::vector<BandStats> band_stats(std::span<const Boxd> boxes, int grid_rows, int stride) {
    std::vector<std::vector<const Boxd*>> by_row(static_cast<std::size_t>(grid_rows));
    for (const auto& b : boxes) {
        by_row[static_cast<std::size_t>(grid_row(b.cy, grid_rows, stride))].push_back(&b);
    }
    std::vector<BandStats> out(static_cast<std::size_t>(grid_rows));
    for (int i = 0; i < grid_rows; ++i) {
        BandStats& s = out[static_cast<std::size_t>(i)];
        s.row = i;
        double sum_w = 0;
        double sum_h = 0;
        for (int r = std::max(0, i - 1); r <= std::min(grid_rows - 1, i + 1); ++r) {
            for (const Boxd* b : by_row[static_cast<std::size_t>(r)]) {
                sum_w += b->w;
                sum_h += b->h;
                ++s.count;
            }
        }
        if (s.count == 0) {
            continue;
        }
        s.mean_w = sum_w / s.count;
        s.mean_h = sum_h / s.count;
        double var_w = 0;
        double var_h = 0;
        for (int r = std::max(0, i - 1); r <= std::min(grid_rows - 1, i + 1); ++r) {
            for (const Boxd* b : by_row[static_cast<std::size_t>(r)]) {
                var_w += (b->w - s.mean_w) * (b->w - s.mean_w);
                var_h += (b->h - s.mean_h) * (b->h - s.mean_h);
            }
        }
        s.std_w = std::sqrt(var_w / s.count);
        s.std_h = std::sqrt(var_h / s.count);
    }
    return out;
}

ExtentBounds width_bounds(const BandStats& band, double lower_floor) {
    return {std::max(band.mean_w - 3 * band.std_w, lower_floor), band.mean_w + 3 * band.std_w};
}

ExtentBounds height_bounds(const BandStats& band, double lower_floor) {
    return {std::max(band.mean_h - 3 * band.std_h, lower_floor), band.mean_h + 3 * band.std_h};
}

namespace {

struct Penalty {
    double value = 0;
    double grad = 0;
};

// Three-sigma penalty on one extent. `delta` is the raw predicted log offset
// relative to `anchor_extent`; gradients vanish where the clamp is active.
Penalty band_penalty(double anchor_extent, double delta, const ExtentBounds& bounds, ExtentSpace space) {
    const bool clamped = std::abs(delta) > kDeltaClamp;
    const double pred = anchor_extent * std::exp(clamp_delta(delta));
    double bound;
    if (pred > bounds.upper) {
        bound = bounds.upper;
    } else if (pred < bounds.lower) {
        bound = bounds.lower;
    } else {
        return {};
    }
    if (space == ExtentSpace::Log) {
        const double diff = std::log(anchor_extent) + clamp_delta(delta) - std::log(bound);
        return {diff * diff, clamped ? 0.0 : 2 * diff};
    }
    const double diff = (pred - bound) / anchor_extent;
    return {diff * diff, clamped ? 0.0 : 2 * diff * pred / anchor_extent};
}

Penalty squared(double target, double delta) {
    if (std::abs(delta) > kDeltaClamp) {
        const double diff = target - clamp_delta(delta);
        return {diff * diff, 0.0};
    }
    const double diff = target - delta;
    return {diff * diff, -2 * diff};
}

} // namespace

LossBreakdown reg_loss(std::span<const RegTerm> terms, const RegLossConfig& config) {
    LossBreakdown out;
    out.reg_grad.resize(terms.size());
    if (terms.empty()) {
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const RegTerm& t = terms[i];
        const double tx = (t.target.cx - t.anchor.cx) / t.anchor.w;
        const double ty = (t.target.cy - t.anchor.cy) / t.anchor.h;
        const double ex = tx - t.pred.dx;
        const double ey = ty - t.pred.dy;
        out.lxy += (ex * ex + ey * ey) * inv_n;
        RegDeltasd& g = out.reg_grad[i];
        g.dx = -2 * ex * inv_n;
        g.dy = -2 * ey * inv_n;

        Penalty pw;
        Penalty ph;
        if (config.mode == RegressionMode::Classic) {
            pw = squared(std::log(t.target.w / t.anchor.w), t.pred.dw);
            ph = squared(std::log(t.target.h / t.anchor.h), t.pred.dh);
        } else if (t.band.constrained()) {
            pw = band_penalty(t.anchor.w, t.pred.dw, width_bounds(t.band, config.lower_floor), config.space);
            ph = band_penalty(t.anchor.h, t.pred.dh, height_bounds(t.band, config.lower_floor), config.space);
        }
        out.lw += pw.value * inv_n;
        out.lh += ph.value * inv_n;
        g.dw = pw.grad * inv_n;
        g.dh = ph.grad * inv_n;
    }
    out.reg_total = out.lxy + out.lw + out.lh;
    return out;
}

double sigmoid(double logit) {
    if (logit >= 0) {
        return 1.0 / (1.0 + std::exp(-logit));
    }
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

double bce(double logit, int label) {
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

ClsLoss cls_loss(std::span<const double> logits, std::span<const int> labels) {
    ClsLoss out;
    out.grad.resize(logits.size());
    if (logits.empty()) {
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.loss += bce(logits[i], labels[i]) * inv_n;
        out.grad[i] = (sigmoid(logits[i]) - labels[i]) * inv_n;
    }
    return out;
}

std::vector<std::size_t> ohem_select(std::span<const double> anchor_losses, std::span<const std::size_t> negatives,
                                     std::size_t positive_count, const OhemConfig& config) {
    std::size_t want = positive_count > 0
                           ? static_cast<std::size_t>(std::ceil(config.negative_ratio * static_cast<double>(positive_count)))
                           : config.background_only;
    want = std::min({want, config.max_negatives, negatives.size()});
    std::vector<std::size_t> order(negatives.begin(), negatives.end());
    auto harder = [&](std::size_t a, std::size_t b) {
        if (anchor_losses[a] != anchor_losses[b]) {
            return anchor_losses[a] > anchor_losses[b];
        }
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(want), order.end(), harder);
    order.resize(want);
    return order;
}

} // namespace pointbox
