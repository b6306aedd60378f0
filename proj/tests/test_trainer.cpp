#include <doctest.h>

#include <random>

#include "pointbox/error.hpp"
#include "pointbox/trainer.hpp"

using namespace pointbox;

namespace {

SceneSpec small_spec() {
    SceneSpec spec;
    spec.width = 64;
    spec.height = 64;
    spec.base_size = 6;
    spec.slope = 0.08;
    spec.min_count = 8;
    spec.max_count = 12;
    spec.top_bias = 1;
    return spec;
}

std::vector<TrainingScene> small_scenes(std::size_t n) {
    std::vector<TrainingScene> out;
    for (const auto& s : generate(small_spec(), n)) {
        out.push_back(training_view(s));
    }
    return out;
}

TrainConfig small_config(Variant v) {
    TrainConfig c = TrainConfig::desk_scale();
    c.variant = v;
    c.crop_size = 64;
    c.epochs = 2;
    c.batch_size = 4;
    c.stage_epochs = 1;
    return c;
}

double mean_nn(const std::vector<Pointd>& pts) {
    const auto d = nn_distances(pts);
    double s = 0;
    for (double v : d) {
        s += v;
    }
    return s / static_cast<double>(d.size());
}

} // namespace

TEST_CASE("variant ladder toggles one mechanism per rung") {
    auto count = [](const Mechanisms& m) { return int(m.update_pseudo_gt) + int(m.constrained_loss) + int(m.curriculum); };
    const std::vector<Variant> ladder{Variant::Pv0, Variant::Pv1, Variant::Pv2, Variant::Pv3};
    CHECK(count(mechanisms(Variant::Pv0)) == 0);
    for (std::size_t i = 1; i < ladder.size(); ++i) {
        const Mechanisms a = mechanisms(ladder[i - 1]);
        const Mechanisms b = mechanisms(ladder[i]);
        CHECK(count(b) == count(a) + 1);
        CHECK((!a.update_pseudo_gt || b.update_pseudo_gt));
        CHECK((!a.constrained_loss || b.constrained_loss));
        CHECK((!a.curriculum || b.curriculum));
        CHECK(parse_variant(to_string(ladder[i])) == ladder[i]);
    }
    CHECK_THROWS_AS(parse_variant("Pv9"), ConfigError);
}

TEST_CASE("config json round trip and strictness") {
    TrainConfig c = TrainConfig::desk_scale();
    c.lr = 0.123;
    c.variant = Variant::Pv2;
    nlohmann::json j = c;
    const TrainConfig back = j.get<TrainConfig>();
    CHECK(back.lr == 0.123);
    CHECK(back.variant == Variant::Pv2);
    CHECK(nlohmann::json(back) == j);

    nlohmann::json unknown = {{"learning_rate", 0.1}};
    CHECK_THROWS_AS(unknown.get<TrainConfig>(), ConfigError);
    nlohmann::json wrong_type = {{"epochs", "ten"}};
    CHECK_THROWS_AS(wrong_type.get<TrainConfig>(), ConfigError);
    nlohmann::json bad_value = {{"batch_size", 0}};
    CHECK_THROWS_AS(bad_value.get<TrainConfig>().validate(), ConfigError);
    const TrainConfig partial = nlohmann::json{{"epochs", 3}}.get<TrainConfig>();
    CHECK(partial.epochs == 3);
    CHECK(partial.lr == TrainConfig::desk_scale().lr);
}

TEST_CASE("validation split is a deterministic function of the id") {
    const auto scenes = small_scenes(40);
    const auto a = split_dataset(scenes, 0.25);
    const auto b = split_dataset(scenes, 0.25);
    CHECK(a.val.size() == b.val.size());
    CHECK(a.train.size() + a.val.size() == scenes.size());
    CHECK(a.val.size() > 0);
    for (const auto& s : a.val) {
        CHECK(is_validation_id(s.id, 0.25));
    }
    for (const auto& s : a.train) {
        CHECK_FALSE(is_validation_id(s.id, 0.25));
    }
}

TEST_CASE("augment at scale 1 with a full crop is the identity") {
    const auto scene = small_scenes(1)[0];
    std::vector<PseudoGT> pseudo(scene.points.size());
    std::mt19937_64 rng(1);
    const Sample s = augment(scene, pseudo, 1.0, 64, rng);
    CHECK(s.image == scene.image);
    CHECK(s.points == scene.points);
    CHECK(s.head_index.size() == scene.points.size());
    CHECK(s.offset_x == 0);
    CHECK(s.scale_x == 1.0);
}

TEST_CASE("augment at scale 2 doubles every nearest-neighbour distance") {
    const auto scene = small_scenes(1)[0];
    std::vector<PseudoGT> pseudo(scene.points.size());
    std::mt19937_64 rng(2);
    const Sample s = augment(scene, pseudo, 2.0, 128, rng);
    REQUIRE(s.points.size() == scene.points.size());
    const auto before = nn_distances(scene.points);
    const auto after = nn_distances(s.points);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i] == doctest::Approx(2 * before[i]).epsilon(1e-12));
    }
    CHECK(mean_nn(s.points) == doctest::Approx(2 * mean_nn(scene.points)));
}

TEST_CASE("augment with a crop matches an independent transform") {
    SceneSpec spec = small_spec();
    spec.width = 128;
    spec.height = 128;
    spec.min_count = 30;
    spec.max_count = 30;
    const TrainingScene scene = training_view(generate_scene(spec, 3));
    std::vector<PseudoGT> pseudo(scene.points.size());
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
        pseudo[i].point = scene.points[i];
        pseudo[i].box = {scene.points[i].x, scene.points[i].y, 6.0 + static_cast<double>(i % 5), 7};
    }
    for (double scale : {0.5, 1.5}) {
        for (int trial = 0; trial < 10; ++trial) {
            std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
            const Sample s = augment(scene, pseudo, scale, 96, rng);
            const double sx = std::lround(128 * scale) / 128.0;
            std::vector<std::size_t> expect;
            for (std::size_t i = 0; i < scene.points.size(); ++i) {
                const double x = scene.points[i].x * sx - s.offset_x;
                const double y = scene.points[i].y * sx - s.offset_y;
                const double limit = std::min(96.0, std::lround(128 * scale) * 1.0);
                if (x >= 0 && y >= 0 && x < limit && y < limit) {
                    expect.push_back(i);
                }
            }
            REQUIRE(s.head_index == expect);
            for (std::size_t k = 0; k < expect.size(); ++k) {
                const std::size_t i = expect[k];
                CHECK(s.points[k].x == doctest::Approx(scene.points[i].x * sx - s.offset_x));
                CHECK(s.boxes[k].w == doctest::Approx(pseudo[i].box.w * sx));
                CHECK(s.boxes[k].h == doctest::Approx(pseudo[i].box.h * sx));
            }
        }
    }
}

TEST_CASE("Pv0 leaves the pseudo store untouched") {
    const auto scenes = small_scenes(4);
    const TrainConfig config = small_config(Variant::Pv0);
    RunSetup setup = prepare_run(scenes, config);
    TrainState state{{NetParams<float>::init(config.seed), setup.specs}, NetParams<float>::zeros(), setup.pseudo};
    std::vector<const TrainingScene*> ptrs;
    for (const auto& s : scenes) {
        ptrs.push_back(&s);
    }
    train_epoch(state, ptrs, config, 0);
    CHECK(history_json(state.pseudo) == history_json(setup.pseudo));
}

TEST_CASE("Pv1 and Pv2 differ only in the regression loss") {
    const auto scenes = small_scenes(4);
    std::vector<const TrainingScene*> ptrs;
    for (const auto& s : scenes) {
        ptrs.push_back(&s);
    }
    auto one_epoch = [&](Variant v) {
        const TrainConfig config = small_config(v);
        RunSetup setup = prepare_run(scenes, config);
        TrainState state{{NetParams<float>::init(config.seed), setup.specs}, NetParams<float>::zeros(), setup.pseudo};
        return train_epoch(state, ptrs, config, 0);
    };
    const EpochStats a = one_epoch(Variant::Pv1);
    const EpochStats b = one_epoch(Variant::Pv2);
    CHECK(a.cls == b.cls);
    CHECK(a.reg != b.reg);
}

TEST_CASE("SGD on one fixed sample lowers its loss") {
    const auto scenes = small_scenes(1);
    TrainConfig config = small_config(Variant::Pv0);
    const RunSetup setup = prepare_run(scenes, config);
    NetParams<float> params = NetParams<float>::init(config.seed);
    NetParams<float> velocity = NetParams<float>::zeros();
    std::mt19937_64 rng(3);
    const Sample sample = augment(scenes[0], setup.pseudo.at(scenes[0].id), 1.0, 64, rng);
    std::vector<double> losses;
    for (int step = 0; step < 20; ++step) {
        ForwardCache<float> cache;
        const auto pred = forward(params, sample.image, &cache);
        const auto objective = sample_objective(pred, sample, setup.specs, config);
        losses.push_back(objective.loss.total());
        sgd_step(params, backward(params, cache, objective.grad_fused), velocity, SgdConfig{1e-3, 0.0, 0.0});
    }
    int drops = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) {
        drops += losses[i] < losses[i - 1] ? 1 : 0;
    }
    CHECK(losses.back() < losses.front());
    CHECK(drops == static_cast<int>(losses.size()) - 1);
}

TEST_CASE("predict postconditions") {
    const Model model{NetParams<float>::init(1, 3.0), build_specs(std::vector<double>{4, 6, 8, 10, 12})};
    const auto scene = small_scenes(1)[0];
    EvalProtocol protocol;
    PredictOptions options;
    options.min_score = 0.5;
    const Prediction p = predict(model, scene.image, protocol, options);
    for (std::size_t i = 0; i < p.detections.size(); ++i) {
        CHECK(p.detections[i].score >= 0.5);
        if (i > 0) {
            CHECK(p.detections[i].score <= p.detections[i - 1].score);
        }
    }
    std::size_t confident = 0;
    for (const auto& d : p.detections) {
        confident += d.score >= protocol.confidence ? 1 : 0;
    }
    CHECK(p.count == confident);

    const Model fresh{NetParams<float>::init(1), model.specs};
    CHECK(predict(fresh, GrayImage::Zero(64, 64), protocol).detections.empty());
}

TEST_CASE("runs are deterministic") {
    const auto data = split_dataset(small_scenes(10), 0.2);
    TrainConfig config = small_config(Variant::Pv3);
    config.epochs = 3;
    const RunResult a = run(config, data);
    const RunResult b = run(config, data);
    CHECK(history_csv(a.history) == history_csv(b.history));
    CHECK(loss_log_csv(a.loss_rows) == loss_log_csv(b.loss_rows));
    CHECK(history_json(a.pseudo) == history_json(b.pseudo));
    for (std::size_t l = 0; l < a.final_model.params.layers.size(); ++l) {
        CHECK(a.final_model.params.layers[l].weight == b.final_model.params.layers[l].weight);
    }
    REQUIRE(a.history.size() == 3);
    CHECK(a.history[0].active_folds == std::set<int>{1});
    CHECK(a.history[2].active_folds == std::set<int>{1, 2, 3});
    double best = a.history[0].val_mae;
    for (const auto& r : a.history) {
        best = std::min(best, r.val_mae);
    }
    CHECK(a.best_val_mae == best);
}
