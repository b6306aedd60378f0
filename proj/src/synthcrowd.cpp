#include "pointbox/synthcrowd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "pointbox/error.hpp"

namespace pointbox {

using nlohmann::json;

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) {
        throw SpecInfeasible("image extent must be positive");
    }
    if (base_size < 2) {
        throw SpecInfeasible("base_size must be >= 2");
    }
    if (slope < 0) {
        throw SpecInfeasible("slope must be >= 0");
    }
    if (min_count < 2 || max_count < min_count) {
        throw SpecInfeasible("count range must satisfy 2 <= min_count <= max_count");
    }
    if (!(top_bias >= 0)) {
        throw SpecInfeasible("top_bias must be >= 0");
    }
    if (noise_sigma < 0) {
        throw SpecInfeasible("noise_sigma must be >= 0");
    }
}

void to_json(json& j, const SceneSpec& spec) {
    j = json{{"width", spec.width},         {"height", spec.height},       {"base_size", spec.base_size},
             {"slope", spec.slope},         {"min_count", spec.min_count}, {"max_count", spec.max_count},
             {"top_bias", spec.top_bias},   {"noise_sigma", spec.noise_sigma}, {"seed", spec.seed}};
}

void from_json(const json& j, SceneSpec& spec) {
    static const std::set<std::string> known = {"width",     "height",    "base_size", "slope", "min_count",
                                                "max_count", "top_bias",  "noise_sigma", "seed"};
    if (!j.is_object()) {
        throw FormatError("scene spec must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw FormatError("unknown scene spec key: " + key);
        }
    }
    SceneSpec out;
    out.width = j.value("width", out.width);
    out.height = j.value("height", out.height);
    out.base_size = j.value("base_size", out.base_size);
    out.slope = j.value("slope", out.slope);
    out.min_count = j.value("min_count", out.min_count);
    out.max_count = j.value("max_count", out.max_count);
    out.top_bias = j.value("top_bias", out.top_bias);
    out.noise_sigma = j.value("noise_sigma", out.noise_sigma);
    out.seed = j.value("seed", out.seed);
    spec = out;
}

std::string scene_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", index);
    return buf;
}

namespace {

constexpr int kMaxAttempts = 100000;

// Inverse CDF of the row density truncated to [0, height).
double sample_row(const SceneSpec& spec, double u) {
    if (spec.top_bias < 1e-9) {
        return u * spec.height;
    }
    const double b = spec.top_bias;
    return -spec.height / b * std::log1p(-u * -std::expm1(-b));
}

Boxd clip_to_image(const Boxd& b, int width, int height) {
    const double x1 = std::max(0.0, b.x1());
    const double y1 = std::max(0.0, b.y1());
    const double x2 = std::min<double>(width, b.x2());
    const double y2 = std::min<double>(height, b.y2());
    return Boxd::from_corners(x1, y1, x2, y2);
}

void render_blob(GrayImage& image, const Pointd& c, double diameter, float amplitude) {
    const double radius = diameter / 2;
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x - radius)));
    const int x1 = std::min<int>(static_cast<int>(image.cols()) - 1, static_cast<int>(std::ceil(c.x + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y - radius)));
    const int y1 = std::min<int>(static_cast<int>(image.rows()) - 1, static_cast<int>(std::ceil(c.y + radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - c.x;
            const double dy = y + 0.5 - c.y;
            const double rr = (dx * dx + dy * dy) / (radius * radius);
            if (rr < 1) {
                const float v = amplitude * static_cast<float>(1 - rr);
                image(y, x) = std::max(image(y, x), v);
            }
        }
    }
}

} // namespace

Scene generate_scene(const SceneSpec& spec, std::size_t index) {
    spec.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int count = std::uniform_int_distribution<int>(spec.min_count, spec.max_count)(rng);
    Scene scene;
    scene.id = scene_id(index);
    scene.points.reserve(count);

    std::vector<double> sizes;
    int attempts = 0;
    while (static_cast<int>(scene.points.size()) < count) {
        if (++attempts > kMaxAttempts) {
            throw SpecInfeasible("cannot place " + std::to_string(count) + " heads in " + scene.id +
                                 " under the separation constraint");
        }
        const double y = sample_row(spec, unit(rng));
        const double s = spec.head_size(y);
        if (y < s / 2 || y > spec.height - s / 2 || spec.width < s) {
            continue;
        }
        const double x = s / 2 + unit(rng) * (spec.width - s);
        const Pointd p{x, y};
        const bool separated = std::none_of(scene.points.begin(), scene.points.end(), [&](const Pointd& q) {
            const double need = 0.5 * std::max(s, spec.head_size(q.y));
            return distance(p, q) < need;
        });
        if (separated) {
            scene.points.push_back(p);
            sizes.push_back(s);
        }
    }

    scene.image = GrayImage::Constant(spec.height, spec.width, 0.1f);
    std::uniform_real_distribution<float> amplitude(0.55f, 0.95f);
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        render_blob(scene.image, scene.points[i], sizes[i], amplitude(rng));
        const Boxd full{scene.points[i].x, scene.points[i].y, sizes[i], sizes[i]};
        scene.true_boxes.push_back(clip_to_image(full, spec.width, spec.height));
    }
    if (spec.noise_sigma > 0) {
        std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
        for (Eigen::Index i = 0; i < scene.image.size(); ++i) {
            scene.image.data()[i] += noise(rng);
        }
    }
    quantize_to_u8(scene.image);
    return scene;
}

std::vector<Scene> generate(const SceneSpec& spec, std::size_t n_scenes) {
    std::vector<Scene> scenes;
    scenes.reserve(n_scenes);
    for (std::size_t i = 0; i < n_scenes; ++i) {
        scenes.push_back(generate_scene(spec, i));
    }
    return scenes;
}

void save_scene(const Scene& scene, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_pgm(dir / (scene.id + ".pgm"), scene.image);
    json j;
    j["id"] = scene.id;
    j["width"] = scene.image.cols();
    j["height"] = scene.image.rows();
    j["points"] = json::array();
    for (const auto& p : scene.points) {
        j["points"].push_back({p.x, p.y});
    }
    j["true_boxes"] = json::array();
    for (const auto& b : scene.true_boxes) {
        j["true_boxes"].push_back({b.cx, b.cy, b.w, b.h});
    }
    std::ofstream out(dir / (scene.id + ".json"));
    if (!out) {
        throw IoError("cannot write annotations for " + scene.id);
    }
    out << j.dump() << '\n';
}

namespace {

json read_annotation(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

template <typename Fn>
auto with_field(const json& j, const char* key, const std::filesystem::path& path, Fn&& fn) {
    if (!j.is_object() || !j.contains(key)) {
        throw FormatError(path.string() + ": missing field \"" + key + "\"");
    }
    try {
        return fn(j.at(key));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": field \"" + key + "\": " + e.what());
    }
}

std::vector<Pointd> parse_points(const json& j, const std::filesystem::path& path) {
    return with_field(j, "points", path, [](const json& arr) {
        std::vector<Pointd> points;
        for (const auto& p : arr) {
            if (p.size() != 2) {
                throw FormatError("point must have two coordinates");
            }
            points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        }
        return points;
    });
}

std::vector<Boxd> parse_boxes(const json& j, const std::filesystem::path& path) {
    return with_field(j, "true_boxes", path, [](const json& arr) {
        std::vector<Boxd> boxes;
        for (const auto& b : arr) {
            if (b.size() != 4) {
                throw FormatError("box must have four values");
            }
            boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                             b.at(3).get<double>()});
        }
        return boxes;
    });
}

void check_extent(const json& j, const GrayImage& image, const std::filesystem::path& path) {
    const auto width = with_field(j, "width", path, [](const json& v) { return v.get<long>(); });
    const auto height = with_field(j, "height", path, [](const json& v) { return v.get<long>(); });
    if (width != image.cols() || height != image.rows()) {
        throw FormatError(path.string() + ": width/height disagree with the image");
    }
}

} // namespace

namespace {

Scene parse_scene(const json& j, const std::string& id, const std::filesystem::path& path) {
    Scene scene;
    scene.id = id;
    scene.points = parse_points(j, path);
    scene.true_boxes = parse_boxes(j, path);
    if (scene.points.size() != scene.true_boxes.size()) {
        throw FormatError(path.string() + ": " + std::to_string(scene.points.size()) + " points but " +
                          std::to_string(scene.true_boxes.size()) + " true boxes");
    }
    return scene;
}

} // namespace

Scene load_scene_annotations(const std::filesystem::path& dir, const std::string& id) {
    const auto path = dir / (id + ".json");
    return parse_scene(read_annotation(path), id, path);
}

Scene load_scene(const std::filesystem::path& dir, const std::string& id) {
    const auto path = dir / (id + ".json");
    const json j = read_annotation(path);
    Scene scene = parse_scene(j, id, path);
    scene.image = read_pgm(dir / (id + ".pgm"));
    check_extent(j, scene.image, path);
    return scene;
}

TrainingScene load_training_scene(const std::filesystem::path& dir, const std::string& id) {
    const auto path = dir / (id + ".json");
    const json j = read_annotation(path);
    TrainingScene scene;
    scene.id = id;
    scene.image = read_pgm(dir / (id + ".pgm"));
    check_extent(j, scene.image, path);
    scene.points = parse_points(j, path);
    return scene;
}

TrainingScene training_view(const Scene& scene) {
    return {scene.id, scene.image, scene.points};
}

std::vector<std::string> list_scene_ids(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<std::string> ids;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".pgm") {
            auto stem = entry.path().stem().string();
            if (std::filesystem::exists(dir / (stem + ".json"))) {
                ids.push_back(std::move(stem));
            }
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace pointbox
