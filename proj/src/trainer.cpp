#include "pointbox/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pointbox/error.hpp"
#include "pointbox/parallel.hpp"

namespace pointbox {

Mechanisms mechanisms(Variant v) {
    switch (v) {
    case Variant::Pv0:
        return {false, false, false};
    case Variant::Pv1:
        return {true, false, false};
    case Variant::Pv2:
        return {true, true, false};
    case Variant::Pv3:
        return {true, true, true};
    }
    return {};
}

std::string to_string(Variant v) {
    switch (v) {
    case Variant::Pv0:
        return "Pv0";
    case Variant::Pv1:
        return "Pv1";
    case Variant::Pv2:
        return "Pv2";
    case Variant::Pv3:
        return "Pv3";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::Pv0, Variant::Pv1, Variant::Pv2, Variant::Pv3}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw ConfigError("unknown variant \"" + s + "\" (expected Pv0, Pv1, Pv2 or Pv3)");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.epochs = 50;
    c.batch_size = 12;
    c.lr = 1e-4;
    c.crop_size = 500;
    return c;
}

TrainConfig TrainConfig::desk_scale() {
    TrainConfig c;
    c.epochs = 150;
    c.batch_size = 4;
    c.lr = 0.1;
    c.crop_size = 256;
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr > 0)) fail("lr must be positive");
    if (momentum < 0 || momentum >= 1) fail("momentum must be in [0, 1)");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (aug_scales.empty()) fail("aug_scales must not be empty");
    for (double s : aug_scales) {
        if (!(s > 0)) fail("aug_scales must be positive");
    }
    if (crop_size < 16) fail("crop_size must be >= 16");
    if (!(iou_negative > 0 && iou_negative <= iou_positive && iou_positive <= 1)) {
        fail("IoU thresholds must satisfy 0 < negative <= positive <= 1");
    }
    if (!(ohem_ratio > 0)) fail("ohem_ratio must be positive");
    if (stage_epochs < 1) fail("stage_epochs must be >= 1");
    if (folds < 1) fail("folds must be >= 1");
    if (reg_weight < 0) fail("reg_weight must be >= 0");
    if (val_fraction < 0 || val_fraction >= 1) fail("val_fraction must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"variant", to_string(c.variant)},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"momentum", c.momentum},
                       {"weight_decay", c.weight_decay},
                       {"aug_scales", c.aug_scales},
                       {"crop_size", c.crop_size},
                       {"iou_positive", c.iou_positive},
                       {"iou_negative", c.iou_negative},
                       {"ohem_ratio", c.ohem_ratio},
                       {"stage_epochs", c.stage_epochs},
                       {"folds", c.folds},
                       {"reg_weight", c.reg_weight},
                       {"extent_space", c.extent_space == ExtentSpace::Log ? "log" : "pixel"},
                       {"per_scale_nms", c.per_scale_nms},
                       {"val_fraction", c.val_fraction},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    TrainConfig out = TrainConfig::desk_scale();
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "variant") out.variant = parse_variant(v.get<std::string>());
            else if (key == "epochs") out.epochs = v.get<int>();
            else if (key == "batch_size") out.batch_size = v.get<int>();
            else if (key == "lr") out.lr = v.get<double>();
            else if (key == "momentum") out.momentum = v.get<double>();
            else if (key == "weight_decay") out.weight_decay = v.get<double>();
            else if (key == "aug_scales") out.aug_scales = v.get<std::vector<double>>();
            else if (key == "crop_size") out.crop_size = v.get<int>();
            else if (key == "iou_positive") out.iou_positive = v.get<double>();
            else if (key == "iou_negative") out.iou_negative = v.get<double>();
            else if (key == "ohem_ratio") out.ohem_ratio = v.get<double>();
            else if (key == "stage_epochs") out.stage_epochs = v.get<int>();
            else if (key == "folds") out.folds = v.get<int>();
            else if (key == "reg_weight") out.reg_weight = v.get<double>();
            else if (key == "extent_space") {
                const auto s = v.get<std::string>();
                if (s == "log") out.extent_space = ExtentSpace::Log;
                else if (s == "pixel") out.extent_space = ExtentSpace::Pixel;
                else throw ConfigError("extent_space must be \"log\" or \"pixel\"");
            }
            else if (key == "per_scale_nms") out.per_scale_nms = v.get<bool>();
            else if (key == "val_fraction") out.val_fraction = v.get<double>();
            else if (key == "seed") out.seed = v.get<std::uint64_t>();
            else throw ConfigError("unknown config key: " + key);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    out.validate();
    c = out;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

int round_up16(int v) {
    return (v + 15) / 16 * 16;
}

} // namespace

bool is_validation_id(const std::string& id, double val_fraction) {
    return static_cast<double>(fnv1a(id) % 10000) < val_fraction * 10000.0;
}

DatasetSplit split_dataset(std::vector<TrainingScene> scenes, double val_fraction) {
    DatasetSplit out;
    for (auto& s : scenes) {
        (is_validation_id(s.id, val_fraction) ? out.val : out.train).push_back(std::move(s));
    }
    return out;
}

Sample augment(const TrainingScene& scene, std::span<const PseudoGT> pseudo, double scale, int crop_size,
               std::mt19937_64& rng) {
    const int in_w = static_cast<int>(scene.image.cols());
    const int in_h = static_cast<int>(scene.image.rows());
    const int w = std::max(1, static_cast<int>(std::lround(in_w * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(in_h * scale)));
    Sample s;
    s.scale_x = static_cast<double>(w) / in_w;
    s.scale_y = static_cast<double>(h) / in_h;
    const GrayImage scaled = (w == in_w && h == in_h) ? scene.image : resize_bilinear(scene.image, w, h);
    s.offset_x = w > crop_size ? std::uniform_int_distribution<int>(0, w - crop_size)(rng) : 0;
    s.offset_y = h > crop_size ? std::uniform_int_distribution<int>(0, h - crop_size)(rng) : 0;
    const int cw = std::min(crop_size, w);
    const int ch = std::min(crop_size, h);
    const int canvas = round_up16(crop_size);
    s.image = GrayImage::Zero(canvas, canvas);
    s.image.topLeftCorner(ch, cw) = scaled.block(s.offset_y, s.offset_x, ch, cw);
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        const double x = scene.points[i].x * s.scale_x - s.offset_x;
        const double y = scene.points[i].y * s.scale_y - s.offset_y;
        if (x < 0 || y < 0 || x >= cw || y >= ch) {
            continue;
        }
        s.head_index.push_back(i);
        s.points.push_back({x, y});
        const Boxd& b = pseudo[i].box;
        s.boxes.push_back({x, y, b.w * s.scale_x, b.h * s.scale_y});
    }
    return s;
}

Sample augment(const TrainingScene& scene, std::span<const PseudoGT> pseudo, const TrainConfig& config,
               std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, config.aug_scales.size() - 1);
    Sample s;
    for (int attempt = 0; attempt < 10; ++attempt) {
        s = augment(scene, pseudo, config.aug_scales[pick(rng)], config.crop_size, rng);
        if (!s.points.empty()) {
            break;
        }
    }
    return s;
}

double SampleLoss::total() const {
    return cls + reg;
}

template <typename T>
SampleObjective<T> sample_objective(const PredMaps<T>& pred, const Sample& sample, std::span<const AnchorSpec> specs,
                                    const TrainConfig& config) {
    const FeatureMap<T>& fused = pred.fused;
    const int stride = layer_stride(1);
    const AnchorGrid grid =
        build_grid(fused.width * stride, fused.height * stride, 1, std::vector<AnchorSpec>(specs.begin(), specs.end()));
    const std::size_t per_cell = grid.per_cell();
    if (per_cell * kChannelsPerAnchor != static_cast<std::size_t>(fused.channels)) {
        throw ShapeError("anchor specs do not match the head width");
    }
    const MatchLabels labels = match(grid, sample.boxes, {config.iou_positive, config.iou_negative});

    auto channel = [&](std::size_t a, int k) {
        return static_cast<Eigen::Index>((a % per_cell) * kChannelsPerAnchor + k);
    };
    auto cell = [&](std::size_t a) { return static_cast<Eigen::Index>(a / per_cell); };
    auto value = [&](std::size_t a, int k) { return static_cast<double>(fused.data(channel(a, k), cell(a))); };

    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::vector<double> anchor_losses(grid.size(), 0.0);
    for (std::size_t a = 0; a < grid.size(); ++a) {
        if (labels.label[a] >= 0) {
            positives.push_back(a);
        } else if (labels.label[a] == MatchLabels::kNegative) {
            negatives.push_back(a);
            anchor_losses[a] = bce(value(a, kLogit), 0);
        }
    }
    OhemConfig ohem;
    ohem.negative_ratio = config.ohem_ratio;
    const auto hard = ohem_select(anchor_losses, negatives, positives.size(), ohem);

    std::vector<std::size_t> selected = positives;
    selected.insert(selected.end(), hard.begin(), hard.end());
    std::vector<double> logits;
    std::vector<int> targets;
    for (std::size_t a : selected) {
        logits.push_back(value(a, kLogit));
        targets.push_back(labels.label[a] >= 0 ? 1 : 0);
    }
    const ClsLoss cls = cls_loss(logits, targets);

    std::vector<Boxd> kept;
    for (std::size_t g = 0; g < sample.boxes.size(); ++g) {
        if (!labels.box_ignored[g]) {
            kept.push_back(sample.boxes[g]);
        }
    }
    const auto bands = band_stats(kept, grid.rows, stride);
    std::vector<RegTerm> terms;
    terms.reserve(positives.size());
    for (std::size_t a : positives) {
        const Boxd& target = sample.boxes[static_cast<std::size_t>(labels.label[a])];
        RegTerm t;
        t.anchor = grid.anchor(a);
        t.pred = {value(a, kDx), value(a, kDy), value(a, kDw), value(a, kDh)};
        t.target = target;
        t.band = bands[static_cast<std::size_t>(grid_row(target.cy, grid.rows, stride))];
        terms.push_back(t);
    }
    RegLossConfig reg_config;
    reg_config.mode = mechanisms(config.variant).constrained_loss ? RegressionMode::LocallyConstrained
                                                                  : RegressionMode::Classic;
    reg_config.space = config.extent_space;
    const LossBreakdown reg = reg_loss(terms, reg_config);

    SampleObjective<T> out;
    out.loss.cls = cls.loss;
    out.loss.lxy = reg.lxy;
    out.loss.lw = reg.lw;
    out.loss.lh = reg.lh;
    out.loss.reg = config.reg_weight * reg.reg_total;
    out.loss.positives = positives.size();
    out.loss.negatives = hard.size();

    out.grad_fused = RowMatrix<T>::Zero(fused.channels, fused.height * fused.width);
    for (std::size_t i = 0; i < selected.size(); ++i) {
        out.grad_fused(channel(selected[i], kLogit), cell(selected[i])) += static_cast<T>(cls.grad[i]);
    }
    out.candidates.resize(sample.boxes.size());
    for (std::size_t i = 0; i < positives.size(); ++i) {
        const std::size_t a = positives[i];
        const RegDeltasd& g = reg.reg_grad[i];
        out.grad_fused(channel(a, kDx), cell(a)) += static_cast<T>(config.reg_weight * g.dx);
        out.grad_fused(channel(a, kDy), cell(a)) += static_cast<T>(config.reg_weight * g.dy);
        out.grad_fused(channel(a, kDw), cell(a)) += static_cast<T>(config.reg_weight * g.dw);
        out.grad_fused(channel(a, kDh), cell(a)) += static_cast<T>(config.reg_weight * g.dh);

        const Boxd box = decode(terms[i].anchor, terms[i].pred);
        const Boxd scene_box{(box.cx + sample.offset_x) / sample.scale_x, (box.cy + sample.offset_y) / sample.scale_y,
                             box.w / sample.scale_x, box.h / sample.scale_y};
        out.candidates[static_cast<std::size_t>(labels.label[a])].push_back({scene_box, sigmoid(value(a, kLogit))});
    }
    return out;
}

template SampleObjective<float> sample_objective<float>(const PredMaps<float>&, const Sample&,
                                                        std::span<const AnchorSpec>, const TrainConfig&);
template SampleObjective<double> sample_objective<double>(const PredMaps<double>&, const Sample&,
                                                          std::span<const AnchorSpec>, const TrainConfig&);

namespace {

struct BatchItem {
    SampleLoss loss;
    NetParams<float> grads;
    std::vector<std::size_t> head_index;
    std::vector<std::vector<Candidate>> candidates;
};

std::string describe(const SampleLoss& l) {
    std::ostringstream os;
    os << "cls=" << l.cls << " lxy=" << l.lxy << " lw=" << l.lw << " lh=" << l.lh << " positives=" << l.positives;
    return os.str();
}

} // namespace

EpochStats train_epoch(TrainState& state, std::span<const TrainingScene* const> scenes, const TrainConfig& config,
                       int epoch) {
    const Mechanisms mech = mechanisms(config.variant);
    state.pseudo.reactivate_all();
    // Frozen for the whole epoch; updates land after the last batch.
    const PseudoStore snapshot = state.pseudo;

    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = make_rng(config.seed, static_cast<std::uint64_t>(epoch), 0x5eedull);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<std::vector<std::vector<Candidate>>> candidates(scenes.size());
    std::vector<std::vector<bool>> seen(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        candidates[i].resize(scenes[i]->points.size());
        seen[i].assign(scenes[i]->points.size(), false);
    }

    EpochStats stats;
    stats.epoch = epoch;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t n = std::min(batch, order.size() - start);
        std::vector<BatchItem> items(n);
        parallel_for(n, [&](std::size_t k) {
            const TrainingScene& scene = *scenes[order[start + k]];
            auto rng = make_rng(config.seed, static_cast<std::uint64_t>(epoch), fnv1a(scene.id));
            const Sample sample = augment(scene, snapshot.at(scene.id), config, rng);
            ForwardCache<float> cache;
            const auto pred = forward(state.model.params, sample.image, &cache);
            auto objective = sample_objective(pred, sample, state.model.specs, config);
            items[k].loss = objective.loss;
            items[k].grads = backward(state.model.params, cache, objective.grad_fused);
            items[k].head_index = sample.head_index;
            items[k].candidates = std::move(objective.candidates);
        });

        NetParams<float> grads = NetParams<float>::zeros();
        for (std::size_t k = 0; k < n; ++k) {
            const auto& item = items[k];
            const TrainingScene& scene = *scenes[order[start + k]];
            if (!std::isfinite(item.loss.total())) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", image " + scene.id +
                                   ": " + describe(item.loss));
            }
            grads += item.grads;
            stats.cls += item.loss.cls;
            stats.reg += item.loss.reg;
            stats.lxy += item.loss.lxy;
            stats.lw += item.loss.lw;
            stats.lh += item.loss.lh;
            stats.rows.push_back({epoch, scene.id, item.loss});
            const std::size_t s = order[start + k];
            for (std::size_t h = 0; h < item.head_index.size(); ++h) {
                const std::size_t head = item.head_index[h];
                seen[s][head] = true;
                auto& dst = candidates[s][head];
                dst.insert(dst.end(), item.candidates[h].begin(), item.candidates[h].end());
            }
        }
        grads *= 1.0f / static_cast<float>(n);
        SgdConfig sgd{config.lr, config.momentum, config.weight_decay};
        sgd_step(state.model.params, grads, state.velocity, sgd);
        if (!state.model.params.all_finite()) {
            throw NumericError("parameters became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(start / batch));
        }
    }
    stats.images = order.size();
    if (stats.images > 0) {
        const double inv = 1.0 / static_cast<double>(stats.images);
        stats.cls *= inv;
        stats.reg *= inv;
        stats.lxy *= inv;
        stats.lw *= inv;
        stats.lh *= inv;
    }

    if (mech.update_pseudo_gt) {
        for (std::size_t s = 0; s < scenes.size(); ++s) {
            auto& entries = state.pseudo.at(scenes[s]->id);
            for (std::size_t h = 0; h < entries.size(); ++h) {
                if (!seen[s][h]) {
                    continue;
                }
                const Boxd before = entries[h].box;
                entries[h] = update_pseudo_gt(std::move(entries[h]), candidates[s][h], epoch + 1);
                stats.updated_heads += entries[h].box == before ? 0 : 1;
                stats.inactive_heads += entries[h].active ? 0 : 1;
            }
        }
    }
    return stats;
}

Prediction predict(const Model& model, const GrayImage& image, const EvalProtocol& protocol,
                   const PredictOptions& options) {
    const int in_w = static_cast<int>(image.cols());
    const int in_h = static_cast<int>(image.rows());
    std::vector<Detection> pooled;
    for (double scale : options.scales) {
        const int w = std::max(16, static_cast<int>(std::lround(in_w * scale)));
        const int h = std::max(16, static_cast<int>(std::lround(in_h * scale)));
        const double sx = static_cast<double>(w) / in_w;
        const double sy = static_cast<double>(h) / in_h;
        const GrayImage scaled = (w == in_w && h == in_h) ? image : resize_bilinear(image, w, h);
        const GrayImage input = pad_to(scaled, round_up16(w), round_up16(h));
        const auto pred = forward(model.params, input);
        const FeatureMap<float>& fused = pred.fused;
        const AnchorGrid grid = build_grid(fused.width * 8, fused.height * 8, 1, model.specs);
        const std::size_t per_cell = grid.per_cell();
        std::vector<Detection> found;
        for (std::size_t a = 0; a < grid.size(); ++a) {
            const auto c = static_cast<Eigen::Index>(a / per_cell);
            const auto base = static_cast<Eigen::Index>((a % per_cell) * kChannelsPerAnchor);
            const double score = sigmoid(fused.data(base + kLogit, c));
            if (score < options.min_score) {
                continue;
            }
            const RegDeltasd d{fused.data(base + kDx, c), fused.data(base + kDy, c), fused.data(base + kDw, c),
                               fused.data(base + kDh, c)};
            const Boxd b = decode(grid.anchor(a), d);
            found.push_back({{b.cx / sx, b.cy / sy, b.w / sx, b.h / sy}, score});
        }
        if (options.per_scale_nms) {
            found = nms(std::move(found), protocol.nms_iou);
        }
        pooled.insert(pooled.end(), found.begin(), found.end());
    }
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (pooled.size() > options.max_candidates) {
        pooled.resize(options.max_candidates);
    }
    Prediction out;
    out.detections = nms(std::move(pooled), protocol.nms_iou);
    out.count = static_cast<std::size_t>(std::count_if(out.detections.begin(), out.detections.end(),
                                                       [&](const Detection& d) { return d.score >= protocol.confidence; }));
    return out;
}

Evaluation evaluate(const Model& model, std::span<const TrainingScene> scenes, const EvalProtocol& protocol,
                    const PredictOptions& options) {
    Evaluation out;
    out.images.resize(scenes.size());
    out.counts.resize(scenes.size());
    out.game_instances.resize(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t i) {
        const auto p = predict(model, scenes[i].image, protocol, options);
        out.images[i] = {p.detections, make_ground_truth(scenes[i].points)};
        out.counts[i] = {static_cast<double>(p.count), static_cast<double>(scenes[i].points.size())};
        auto& g = out.game_instances[i];
        g.truth = scenes[i].points;
        g.width = static_cast<int>(scenes[i].image.cols());
        g.height = static_cast<int>(scenes[i].image.rows());
        for (const auto& d : p.detections) {
            if (d.score >= protocol.confidence) {
                g.estimated.push_back(d.box.center());
            }
        }
    });
    out.count_errors = mae_mse(out.counts);
    for (int level = 0; level <= 3; ++level) {
        out.game.push_back(game(out.game_instances, level));
    }
    return out;
}

RunSetup prepare_run(std::span<const TrainingScene> train, const TrainConfig& config) {
    RunSetup setup;
    std::vector<double> all;
    std::vector<std::pair<const TrainingScene*, std::vector<double>>> per_scene;
    for (const auto& s : train) {
        if (s.points.size() < 2) {
            continue;  // no size prior without a neighbour
        }
        auto d = nn_distances(std::span<const Pointd>(s.points));
        all.insert(all.end(), d.begin(), d.end());
        per_scene.emplace_back(&s, std::move(d));
    }
    const int n_scales = kAnchorsPerCell / static_cast<int>(kAnchorAspects.size());
    const auto scales = cluster_scales(all, n_scales);
    setup.specs = build_specs(scales);
    for (const auto& [scene, d] : per_scene) {
        setup.pseudo.insert(scene->id, init_pseudo_gt(scene->points, d, setup.specs));
    }

    std::optional<Moments> moments;
    try {
        moments = dataset_moments(all);
    } catch (const DegenerateDataset&) {
    }
    for (const auto& [scene, d] : per_scene) {
        setup.scores.push_back(moments ? difficulty(scene->id, d, *moments) : CurriculumScore{scene->id, 0.0, 1.0});
    }
    if (moments && setup.scores.size() >= static_cast<std::size_t>(config.folds)) {
        setup.folds = split_folds(setup.scores, config.folds);
    } else {
        for (const auto& s : setup.scores) {
            setup.folds[s.image_id] = 1;
        }
    }
    return setup;
}

namespace {

double validation_mae(const Model& model, std::span<const TrainingScene> val, const TrainConfig& config) {
    std::vector<CountPair> counts(val.size());
    EvalProtocol protocol;
    PredictOptions options;
    options.scales = config.aug_scales;
    options.min_score = protocol.confidence;
    options.per_scale_nms = config.per_scale_nms;
    parallel_for(val.size(), [&](std::size_t i) {
        const auto p = predict(model, val[i].image, protocol, options);
        counts[i] = {static_cast<double>(p.count), static_cast<double>(val[i].points.size())};
    });
    return mae_mse(counts).mae;
}

} // namespace

RunResult run(const TrainConfig& config, const DatasetSplit& data, const EpochObserver& observer) {
    config.validate();
    const Mechanisms mech = mechanisms(config.variant);
    RunSetup setup = prepare_run(data.train, config);

    RunResult result;
    result.scores = setup.scores;
    result.folds = setup.folds;
    result.initial_pseudo = setup.pseudo;

    TrainState state;
    state.model = {NetParams<float>::init(config.seed), setup.specs};
    state.velocity = NetParams<float>::zeros();
    state.pseudo = std::move(setup.pseudo);

    std::set<int> all_folds;
    for (int f = 1; f <= config.folds; ++f) {
        all_folds.insert(f);
    }

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::set<int> active = mech.curriculum ? active_folds(epoch, config.stage_epochs, config.folds) : all_folds;
        std::vector<const TrainingScene*> scenes;
        for (const auto& s : data.train) {
            auto it = result.folds.find(s.id);
            if (it != result.folds.end() && active.contains(it->second)) {
                scenes.push_back(&s);
            }
        }
        EpochStats stats = train_epoch(state, scenes, config, epoch);
        HistoryRow row;
        row.epoch = epoch;
        row.variant = config.variant;
        row.val_mae = data.val.empty() ? 0.0 : validation_mae(state.model, data.val, config);
        row.active_folds = active;
        if (observer) {
            row.pseudo_size_error = observer(epoch + 1, state.pseudo);
        }
        result.loss_rows.insert(result.loss_rows.end(), stats.rows.begin(), stats.rows.end());
        stats.rows.clear();
        row.stats = std::move(stats);
        if (result.best_epoch < 0 || row.val_mae < result.best_val_mae) {
            result.best_epoch = epoch;
            result.best_val_mae = row.val_mae;
            result.best_model = state.model;
        }
        result.history.push_back(std::move(row));
    }
    result.final_model = state.model;
    if (result.best_epoch < 0) {
        result.best_model = state.model;
    }
    result.pseudo = std::move(state.pseudo);
    return result;
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

std::string history_csv(std::span<const HistoryRow> rows) {
    std::ostringstream os;
    os << "epoch,variant,cls,reg,lxy,lw,lh,val_mae,active_folds,pseudo_size_err,updated_heads,inactive_heads\n";
    for (const auto& r : rows) {
        std::string folds;
        for (int f : r.active_folds) {
            folds += (folds.empty() ? "" : "|") + std::to_string(f);
        }
        os << r.epoch << ',' << to_string(r.variant) << ',' << num(r.stats.cls) << ',' << num(r.stats.reg) << ','
           << num(r.stats.lxy) << ',' << num(r.stats.lw) << ',' << num(r.stats.lh) << ',' << num(r.val_mae) << ','
           << folds << ',' << (r.pseudo_size_error ? num(*r.pseudo_size_error) : std::string()) << ','
           << r.stats.updated_heads << ',' << r.stats.inactive_heads << '\n';
    }
    return os.str();
}

std::string loss_log_csv(std::span<const LossRow> rows) {
    std::ostringstream os;
    os << "epoch,image_id,lxy,lw,lh,cls\n";
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.image_id << ',' << num(r.loss.lxy) << ',' << num(r.loss.lw) << ','
           << num(r.loss.lh) << ',' << num(r.loss.cls) << '\n';
    }
    return os.str();
}

} // namespace pointbox
