#include "pointbox/curriculum.hpp"

#include <algorithm>
#include <cmath>

#include "pointbox/error.hpp"

namespace pointbox {

Moments dataset_moments(std::span<const double> nn_dists) {
    if (nn_dists.size() < 2) {
        throw InsufficientData("dataset moments need at least two heads");
    }
    const double n = static_cast<double>(nn_dists.size());
    double sum = 0;
    for (double d : nn_dists) {
        sum += d;
    }
    const double mean = sum / n;
    double ss = 0;
    for (double d : nn_dists) {
        ss += (d - mean) * (d - mean);
    }
    const double stddev = std::sqrt(ss / n);
    if (!(stddev > 0)) {
        throw DegenerateDataset("all nearest-neighbour distances are equal");
    }
    return {mean, stddev};
}

double size_score(double d, const Moments& m) {
    const double z = (d - m.mean) / m.stddev;
    return std::exp(-0.5 * z * z);
}

CurriculumScore difficulty(const std::string& image_id, std::span<const double> nn_dists, const Moments& m) {
    CurriculumScore s;
    s.image_id = image_id;
    if (nn_dists.empty()) {
        s.difficulty = kMaxDifficulty;
        return s;
    }
    double sum = 0;
    for (double d : nn_dists) {
        sum += size_score(d, m);
    }
    s.mean_score = sum / static_cast<double>(nn_dists.size());
    s.difficulty = std::min(1.0 - s.mean_score, kMaxDifficulty);
    return s;
}

FoldAssignment split_folds(std::span<const CurriculumScore> scores, int folds) {
    if (folds < 1 || scores.size() < static_cast<std::size_t>(folds)) {
        throw TooFewImages("need at least " + std::to_string(folds) + " images to split into folds");
    }
    std::vector<const CurriculumScore*> order;
    for (const auto& s : scores) {
        order.push_back(&s);
    }
    std::sort(order.begin(), order.end(), [](const CurriculumScore* a, const CurriculumScore* b) {
        if (a->difficulty != b->difficulty) {
            return a->difficulty < b->difficulty;
        }
        return a->image_id < b->image_id;
    });
    const std::size_t n = order.size();
    const std::size_t base = n / static_cast<std::size_t>(folds);
    const std::size_t extra = n % static_cast<std::size_t>(folds);
    FoldAssignment out;
    std::size_t pos = 0;
    for (int f = 0; f < folds; ++f) {
        const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k, ++pos) {
            out[order[pos]->image_id] = f + 1;
        }
    }
    return out;
}

std::set<int> active_folds(int epoch, int stage_epochs, int folds) {
    const int stage = stage_epochs > 0 ? epoch / stage_epochs : folds;
    std::set<int> out;
    for (int f = 1; f <= std::min(folds, stage + 1); ++f) {
        out.insert(f);
    }
    return out;
}

nlohmann::json folds_json(const FoldAssignment& folds, std::span<const CurriculumScore> scores) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : scores) {
        auto it = folds.find(s.image_id);
        j.push_back({{"id", s.image_id},
                     {"difficulty", s.difficulty},
                     {"mean_score", s.mean_score},
                     {"fold", it == folds.end() ? 0 : it->second}});
    }
    return j;
}

} // namespace pointbox
