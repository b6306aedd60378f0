#pragma once

#include <span>
#include <vector>

#include "pointbox/geometry.hpp"

namespace pointbox {

/// Width/height moments of the pseudo boxes in the 3-row band around `row`
/// (rows row-1..row+1, all columns) of a detection grid. Population moments.
struct BandStats {
    int row = 0;
    double mean_w = 0;
    double std_w = 0;
    double mean_h = 0;
    double std_h = 0;
    int count = 0;

    /// Bands with fewer than two boxes impose no extent constraint.
    bool constrained() const { return count >= 2; }
};

/// One BandStats per grid row. A box belongs to row floor(cy / stride),
/// clamped to the grid.
std::vector<BandStats> band_stats(std::span<const Boxd> boxes, int grid_rows, int stride);

int grid_row(double cy, int grid_rows, int stride);

enum class RegressionMode {
    /// Squared error on all four encoded deltas against the pseudo box.
    Classic,
    /// Center loss plus three-sigma band penalty on width and height.
    LocallyConstrained,
};

enum class ExtentSpace { Log, Pixel };

struct RegLossConfig {
    RegressionMode mode = RegressionMode::LocallyConstrained;
    ExtentSpace space = ExtentSpace::Log;
    /// Lower band bound is floored here (pixels) so its log stays defined.
    double lower_floor = 1.0;
};

/// One positive anchor: its box, the predicted deltas, the pseudo box it
/// regresses to and the band of that pseudo box.
struct RegTerm {
    Boxd anchor;
    RegDeltasd pred;
    Boxd target;
    BandStats band;
};

struct LossBreakdown {
    double lxy = 0;
    double lw = 0;
    double lh = 0;
    /// lxy + lw + lh; every term is a mean over positive anchors.
    double reg_total = 0;
    double cls_total = 0;
    /// d reg_total / d pred, per term.
    std::vector<RegDeltasd> reg_grad;
};

struct ExtentBounds {
    double lower = 0;
    double upper = 0;
};

ExtentBounds width_bounds(const BandStats& band, double lower_floor);
ExtentBounds height_bounds(const BandStats& band, double lower_floor);

LossBreakdown reg_loss(std::span<const RegTerm> terms, const RegLossConfig& config = {});

struct ClsLoss {
    double loss = 0;
    /// d loss / d logit, already divided by the number of selected anchors.
    std::vector<double> grad;
};

/// Mean sigmoid binary cross-entropy over the given (logit, label) pairs.
ClsLoss cls_loss(std::span<const double> logits, std::span<const int> labels);

double bce(double logit, int label);
double sigmoid(double logit);

struct OhemConfig {
    double negative_ratio = 3.0;
    std::size_t background_only = 8;
    std::size_t max_negatives = 256;
};

/// Hardest negatives by loss (ties by ascending anchor index): ratio x
/// positives, or `background_only` when there are no positives, capped.
std::vector<std::size_t> ohem_select(std::span<const double> anchor_losses, std::span<const std::size_t> negatives,
                                     std::size_t positive_count, const OhemConfig& config = {});

} // namespace pointbox
