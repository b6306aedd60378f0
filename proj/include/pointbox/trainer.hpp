#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pointbox/anchors.hpp"
#include "pointbox/curriculum.hpp"
#include "pointbox/evalmetrics.hpp"
#include "pointbox/losses.hpp"
#include "pointbox/pseudogt.hpp"
#include "pointbox/synthcrowd.hpp"
#include "pointbox/tinydet.hpp"

namespace pointbox {

/// Ablation ladder; each rung switches on one more mechanism.
enum class Variant { Pv0, Pv1, Pv2, Pv3 };

struct Mechanisms {
    bool update_pseudo_gt = false;
    bool constrained_loss = false;
    bool curriculum = false;

    friend bool operator==(const Mechanisms&, const Mechanisms&) = default;
};

Mechanisms mechanisms(Variant v);
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct TrainConfig {
    Variant variant = Variant::Pv3;
    int epochs = 30;
    int batch_size = 4;
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<double> aug_scales = {0.5, 1.0, 1.5, 2.0};
    int crop_size = 256;
    double iou_positive = 0.7;
    double iou_negative = 0.3;
    double ohem_ratio = 3.0;
    int stage_epochs = 10;
    int folds = kDefaultFolds;
    double reg_weight = 1.0;
    ExtentSpace extent_space = ExtentSpace::Log;
    /// Test-time scale combination: pool all scales then one NMS (false) or
    /// NMS each scale before pooling (true).
    bool per_scale_nms = false;
    double val_fraction = 0.2;
    std::uint64_t seed = 7;

    /// Values used at full scale (500 crops, batch 12, 50 epochs).
    static TrainConfig full_scale();
    /// CPU-sized defaults.
    static TrainConfig desk_scale();

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Strict: every key must be a known field; missing keys keep desk defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct DatasetSplit {
    std::vector<TrainingScene> train;
    std::vector<TrainingScene> val;
};

/// Deterministic split on a hash of the scene id.
bool is_validation_id(const std::string& id, double val_fraction);
DatasetSplit split_dataset(std::vector<TrainingScene> scenes, double val_fraction);

/// One augmented crop. `head_index` maps each kept head back to its scene.
struct Sample {
    GrayImage image;
    double scale_x = 1;
    double scale_y = 1;
    int offset_x = 0;
    int offset_y = 0;
    std::vector<std::size_t> head_index;
    std::vector<Pointd> points;
    std::vector<Boxd> boxes;
};

/// Rescale by a uniformly chosen factor, take a random crop (zero padded when
/// the image is smaller) and keep the heads whose centers stay inside.
Sample augment(const TrainingScene& scene, std::span<const PseudoGT> pseudo, double scale, int crop_size,
               std::mt19937_64& rng);
Sample augment(const TrainingScene& scene, std::span<const PseudoGT> pseudo, const TrainConfig& config,
               std::mt19937_64& rng);

struct SampleLoss {
    double cls = 0;
    double lxy = 0;
    double lw = 0;
    double lh = 0;
    double reg = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double total() const;
};

/// Loss terms and the gradient of cls + reg_weight * reg w.r.t. the fused map
/// for one sample, plus per-head update candidates in scene coordinates.
template <typename T>
struct SampleObjective {
    SampleLoss loss;
    RowMatrix<T> grad_fused;
    /// Parallel to sample.head_index; empty for heads without positives.
    std::vector<std::vector<Candidate>> candidates;
};

template <typename T>
SampleObjective<T> sample_objective(const PredMaps<T>& pred, const Sample& sample, std::span<const AnchorSpec> specs,
                                    const TrainConfig& config);

struct LossRow {
    int epoch = 0;
    std::string image_id;
    SampleLoss loss;
};

struct EpochStats {
    int epoch = 0;
    double cls = 0;
    double reg = 0;
    double lxy = 0;
    double lw = 0;
    double lh = 0;
    std::size_t images = 0;
    std::size_t updated_heads = 0;
    std::size_t inactive_heads = 0;
    std::vector<LossRow> rows;
};

struct TrainState {
    Model model;
    NetParams<float> velocity;
    PseudoStore pseudo;
};

/// One pass over `scenes`: forward, match against the frozen pseudo store,
/// OHEM, losses, backward and SGD per batch; then the end-of-epoch pseudo GT
/// update when enabled.
EpochStats train_epoch(TrainState& state, std::span<const TrainingScene* const> scenes, const TrainConfig& config,
                       int epoch);

struct PredictOptions {
    std::vector<double> scales = {0.5, 1.0, 1.5, 2.0};
    /// Candidates below this score are dropped before NMS.
    double min_score = 0.8;
    bool per_scale_nms = false;
    std::size_t max_candidates = 4000;
};

struct Prediction {
    /// Post-NMS, score >= options.min_score, descending score.
    std::vector<Detection> detections;
    /// Detections with score >= protocol.confidence.
    std::size_t count = 0;
};

Prediction predict(const Model& model, const GrayImage& image, const EvalProtocol& protocol,
                   const PredictOptions& options = {});

struct HistoryRow {
    int epoch = 0;
    Variant variant = Variant::Pv3;
    EpochStats stats;
    double val_mae = 0;
    std::set<int> active_folds;
    std::optional<double> pseudo_size_error;
};

struct RunResult {
    Model best_model;
    int best_epoch = -1;
    double best_val_mae = 0;
    Model final_model;
    std::vector<HistoryRow> history;
    PseudoStore initial_pseudo;
    PseudoStore pseudo;
    std::vector<CurriculumScore> scores;
    FoldAssignment folds;
    std::vector<LossRow> loss_rows;
};

/// Called after each epoch's pseudo GT update; may return a size-error
/// diagnostic for the history row. Lives outside the trainer so the trainer
/// never sees evaluation-only data.
using EpochObserver = std::function<std::optional<double>(int epoch, const PseudoStore& pseudo)>;

struct Evaluation {
    std::vector<ImageEval> images;
    std::vector<CountPair> counts;
    std::vector<GameInstance> game_instances;
    CountErrors count_errors;
    /// GAME(0..3).
    std::vector<double> game;
};

/// Predicts every scene once; detections at or above `protocol.confidence`
/// are the count and the GAME points, everything down to
/// `options.min_score` feeds average_precision.
Evaluation evaluate(const Model& model, std::span<const TrainingScene> scenes, const EvalProtocol& protocol,
                    const PredictOptions& options);

struct RunSetup {
    std::vector<AnchorSpec> specs;
    PseudoStore pseudo;
    std::vector<CurriculumScore> scores;
    FoldAssignment folds;
};

/// Anchor specs, initial pseudo GT and curriculum folds from the training
/// points alone.
RunSetup prepare_run(std::span<const TrainingScene> train, const TrainConfig& config);

RunResult run(const TrainConfig& config, const DatasetSplit& data, const EpochObserver& observer = {});

std::string history_csv(std::span<const HistoryRow> rows);
std::string loss_log_csv(std::span<const LossRow> rows);

} // namespace pointbox
