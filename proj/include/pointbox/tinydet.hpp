#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "pointbox/anchors.hpp"
#include "pointbox/image.hpp"

namespace pointbox {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Channels-by-pixels activation: row c holds channel c in raster order.
template <typename T>
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    RowMatrix<T> data;

    T& at(int c, int y, int x) { return data(c, y * width + x); }
    T at(int c, int y, int x) const { return data(c, y * width + x); }
};

inline constexpr int kChannelsPerAnchor = 5;
inline constexpr int kHeadChannels = kAnchorsPerCell * kChannelsPerAnchor;

/// Per-anchor channel layout: [logit, dx, dy, dw, dh] for anchor t occupies
/// channels 5t..5t+4.
enum AnchorChannel : int { kLogit = 0, kDx = 1, kDy = 2, kDw = 3, kDh = 4 };

struct ConvShape {
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;

    friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

template <typename T>
struct ConvLayer {
    ConvShape shape;
    RowMatrix<T> weight;  // out x (in * kernel * kernel)
    ColVector<T> bias;
};

/// Backbone: two stride-2 stem convs (8, 16), block3 (32, output stride 8),
/// block4 (64, output stride 16); then one 1x1 head per block.
std::vector<ConvShape> architecture();

inline constexpr std::size_t kBlock3Layer = 3;
inline constexpr std::size_t kBlock4Layer = 5;
inline constexpr std::size_t kHead1Layer = 6;
inline constexpr double kHeadInitSigma = 0.01;
inline constexpr std::size_t kHead2Layer = 7;

template <typename T>
struct NetParams {
    std::vector<ConvLayer<T>> layers;

    static NetParams zeros();
    /// He-scaled Gaussian kernels; the fused classification logit starts at
    /// `cls_bias` (half from each head).
    static NetParams init(std::uint64_t seed, double cls_bias = -2.0);

    std::size_t parameter_count() const;
    bool all_finite() const;

    template <typename U>
    NetParams<U> cast() const {
        NetParams<U> out;
        for (const auto& l : layers) {
            out.layers.push_back({l.shape, l.weight.template cast<U>(), l.bias.template cast<U>()});
        }
        return out;
    }

    NetParams& operator+=(const NetParams& other);
    NetParams& operator*=(T factor);
};

template <typename T>
struct PredMaps {
    FeatureMap<T> pred1;
    FeatureMap<T> pred2;
    /// pred1 + nearest-neighbour 2x upsample of pred2.
    FeatureMap<T> fused;
};

template <typename T>
struct ForwardCache {
    FeatureMap<T> input;
    std::vector<RowMatrix<T>> columns;
    std::vector<FeatureMap<T>> activations;
};

/// Input height and width must be multiples of 16.
template <typename T>
PredMaps<T> forward(const NetParams<T>& params, const GrayImage& image, ForwardCache<T>* cache = nullptr);

/// Reverse-mode gradient of a scalar whose derivative w.r.t. the fused map is
/// `grad_fused` (kHeadChannels x fused pixels).
template <typename T>
NetParams<T> backward(const NetParams<T>& params, const ForwardCache<T>& cache, const RowMatrix<T>& grad_fused);

/// 2x nearest-neighbour upsampling and its adjoint.
template <typename T>
RowMatrix<T> upsample2x(const FeatureMap<T>& map);
template <typename T>
RowMatrix<T> upsample2x_adjoint(const RowMatrix<T>& grad, int height, int width);

struct SgdConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

/// v <- momentum * v - lr * (grad + wd * param); param <- param + v.
template <typename T>
void sgd_step(NetParams<T>& params, const NetParams<T>& grads, NetParams<T>& velocity, const SgdConfig& config);

/// Trained weights plus the anchor specs needed to decode them.
struct Model {
    NetParams<float> params;
    std::vector<AnchorSpec> specs;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const std::filesystem::path& path, const Model& model);
/// Rejects unknown versions and any tensor shape that differs from
/// architecture() with ShapeError.
Model load_model(const std::filesystem::path& path);

} // namespace pointbox
