#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pointbox/geometry.hpp"
#include "pointbox/image.hpp"

namespace pointbox {

/// Parameters of a synthetic perspective crowd. Head side grows linearly
/// with the image row: s(y) = base_size + slope * y.
struct SceneSpec {
    int width = 256;
    int height = 256;
    double base_size = 8.0;
    double slope = 0.05;
    int min_count = 80;
    int max_count = 140;
    /// Row density falls as exp(-top_bias * y / height); 0 is uniform.
    double top_bias = 5.0;
    double noise_sigma = 0.03;
    std::uint64_t seed = 1;

    double head_size(double y) const { return base_size + slope * y; }
    void validate() const;
};

void to_json(nlohmann::json& j, const SceneSpec& spec);
/// Strict: unknown keys are a FormatError.
void from_json(const nlohmann::json& j, SceneSpec& spec);

struct Scene {
    std::string id;
    GrayImage image;
    std::vector<Pointd> points;
    /// Evaluation-only.
    std::vector<Boxd> true_boxes;
};

/// Points-only view of a scene. Everything on the training path consumes
/// this type, so true boxes cannot reach it.
struct TrainingScene {
    std::string id;
    GrayImage image;
    std::vector<Pointd> points;
};

std::string scene_id(std::size_t index);

/// Scene `index` of the stream seeded by `spec.seed`; independent of any
/// other index.
Scene generate_scene(const SceneSpec& spec, std::size_t index);
std::vector<Scene> generate(const SceneSpec& spec, std::size_t n_scenes);

void save_scene(const Scene& scene, const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dir, const std::string& id);
/// Reads the image and the "points" field only.
TrainingScene load_training_scene(const std::filesystem::path& dir, const std::string& id);
/// Reads the "points" and "true_boxes" fields only (no image).
Scene load_scene_annotations(const std::filesystem::path& dir, const std::string& id);

TrainingScene training_view(const Scene& scene);

/// Ids of every scene (a .pgm with a matching .json) in `dir`, sorted.
std::vector<std::string> list_scene_ids(const std::filesystem::path& dir);

} // namespace pointbox
