#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pointbox {

struct Moments {
    double mean = 0;
    double stddev = 0;
};

/// Population mean/std of every head's nearest-neighbour distance.
/// Throws DegenerateDataset when the std is zero.
Moments dataset_moments(std::span<const double> nn_dists);

/// Peak-normalised Gaussian score exp(-(d - mean)^2 / (2 std^2)).
double size_score(double d, const Moments& m);

inline const double kMaxDifficulty = std::nextafter(1.0, 0.0);

struct CurriculumScore {
    std::string image_id;
    /// 1 - mean_score, saturating at kMaxDifficulty when the mean score
    /// underflows.
    double difficulty = 0;
    double mean_score = 0;
};

CurriculumScore difficulty(const std::string& image_id, std::span<const double> nn_dists, const Moments& m);

/// Image id -> fold in 1..folds.
using FoldAssignment = std::map<std::string, int>;

inline constexpr int kDefaultFolds = 3;

/// Ascending difficulty (ties by id) cut into contiguous folds; the first
/// n % folds folds carry one extra image.
FoldAssignment split_folds(std::span<const CurriculumScore> scores, int folds = kDefaultFolds);

/// Folds in the working set at `epoch`: stage s = epoch / stage_epochs
/// admits folds 1..s+1.
std::set<int> active_folds(int epoch, int stage_epochs, int folds = kDefaultFolds);

nlohmann::json folds_json(const FoldAssignment& folds, std::span<const CurriculumScore> scores);

} // namespace pointbox
