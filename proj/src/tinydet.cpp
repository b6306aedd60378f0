#include "pointbox/tinydet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "pointbox/error.hpp"

namespace pointbox {

std::vector<ConvShape> architecture() {
    return {
        {1, 8, 3, 2},   {8, 16, 3, 2},                      // stem, stride 4
        {16, 32, 3, 2}, {32, 32, 3, 1},                     // block3, stride 8
        {32, 64, 3, 2}, {64, 64, 3, 1},                     // block4, stride 16
        {32, kHeadChannels, 1, 1}, {64, kHeadChannels, 1, 1},  // heads
    };
}

template <typename T>
NetParams<T> NetParams<T>::zeros() {
    NetParams out;
    for (const auto& s : architecture()) {
        out.layers.push_back({s, RowMatrix<T>::Zero(s.out, s.in * s.kernel * s.kernel), ColVector<T>::Zero(s.out)});
    }
    return out;
}

template <typename T>
NetParams<T> NetParams<T>::init(std::uint64_t seed, double cls_bias) {
    NetParams out = zeros();
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        auto& l = out.layers[i];
        const bool head = i >= kHead1Layer;
        const double sigma = head ? kHeadInitSigma : std::sqrt(2.0 / static_cast<double>(l.weight.cols()));
        std::normal_distribution<double> normal(0.0, sigma);
        for (Eigen::Index k = 0; k < l.weight.size(); ++k) {
            l.weight.data()[k] = static_cast<T>(normal(rng));
        }
        // Both heads feed the same fused logits; split the prior between them.
        if (head) {
            for (int t = 0; t < kAnchorsPerCell; ++t) {
                l.bias(t * kChannelsPerAnchor + kLogit) = static_cast<T>(cls_bias / 2);
            }
        }
    }
    return out;
}

template <typename T>
std::size_t NetParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

template <typename T>
bool NetParams<T>::all_finite() const {
    for (const auto& l : layers) {
        if (!l.weight.allFinite() || !l.bias.allFinite()) {
            return false;
        }
    }
    return true;
}

template <typename T>
NetParams<T>& NetParams<T>::operator+=(const NetParams& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

template <typename T>
NetParams<T>& NetParams<T>::operator*=(T factor) {
    for (auto& l : layers) {
        l.weight *= factor;
        l.bias *= factor;
    }
    return *this;
}

namespace {

int conv_out(int extent, const ConvShape& s) {
    return (extent + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1;
}

template <typename T>
RowMatrix<T> im2col(const FeatureMap<T>& in, const ConvShape& s, int out_h, int out_w) {
    const int k = s.kernel;
    const int pad = k / 2;
    RowMatrix<T> cols(in.channels * k * k, out_h * out_w);
    for (int c = 0; c < in.channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols.row((c * k + ky) * k + kx).data();
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= in.height) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = in.data.row(c).data() + iy * in.width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride + kx - pad;
                        dst[ox] = (ix < 0 || ix >= in.width) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, const ConvShape& s, int out_h, int out_w, FeatureMap<T>& in) {
    const int k = s.kernel;
    const int pad = k / 2;
    for (int c = 0; c < in.channels; ++c) {
        T* plane = in.data.row(c).data();
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols.row((c * k + ky) * k + kx).data();
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    if (iy < 0 || iy >= in.height) {
                        continue;
                    }
                    const T* src = row + oy * out_w;
                    T* dst = plane + iy * in.width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride + kx - pad;
                        if (ix >= 0 && ix < in.width) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
FeatureMap<T> conv_forward(const ConvLayer<T>& layer, const FeatureMap<T>& in, bool relu, RowMatrix<T>* cols_out) {
    const ConvShape& s = layer.shape;
    if (in.channels != s.in) {
        throw ShapeError("conv input has " + std::to_string(in.channels) + " channels, expected " +
                         std::to_string(s.in));
    }
    FeatureMap<T> out;
    out.channels = s.out;
    out.height = conv_out(in.height, s);
    out.width = conv_out(in.width, s);
    if (s.kernel == 1 && s.stride == 1) {
        out.data.noalias() = layer.weight * in.data;
    } else {
        RowMatrix<T> cols = im2col(in, s, out.height, out.width);
        out.data.noalias() = layer.weight * cols;
        if (cols_out != nullptr) {
            *cols_out = std::move(cols);
        }
    }
    out.data.colwise() += layer.bias;
    if (relu) {
        out.data = out.data.cwiseMax(T(0));
    }
    return out;
}

} // namespace

template <typename T>
RowMatrix<T> upsample2x(const FeatureMap<T>& map) {
    const int h = map.height * 2;
    const int w = map.width * 2;
    RowMatrix<T> out(map.channels, h * w);
    for (int c = 0; c < map.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out(c, y * w + x) = map.at(c, y / 2, x / 2);
            }
        }
    }
    return out;
}

template <typename T>
RowMatrix<T> upsample2x_adjoint(const RowMatrix<T>& grad, int height, int width) {
    const int w2 = width * 2;
    RowMatrix<T> out = RowMatrix<T>::Zero(grad.rows(), height * width);
    for (Eigen::Index c = 0; c < grad.rows(); ++c) {
        for (int y = 0; y < height * 2; ++y) {
            for (int x = 0; x < w2; ++x) {
                out(c, (y / 2) * width + x / 2) += grad(c, y * w2 + x);
            }
        }
    }
    return out;
}

template <typename T>
PredMaps<T> forward(const NetParams<T>& params, const GrayImage& image, ForwardCache<T>* cache) {
    if (image.rows() % 16 != 0 || image.cols() % 16 != 0 || image.size() == 0) {
        throw ShapeError("input " + std::to_string(image.cols()) + "x" + std::to_string(image.rows()) +
                         " is not divisible by 16");
    }
    if (params.layers.size() != architecture().size()) {
        throw ShapeError("parameter set does not match the architecture");
    }
    FeatureMap<T> x;
    x.channels = 1;
    x.height = static_cast<int>(image.rows());
    x.width = static_cast<int>(image.cols());
    const GrayImage normalized = standardize(image);
    x.data = Eigen::Map<const RowMatrix<float>>(normalized.data(), 1, normalized.size()).template cast<T>();

    std::vector<RowMatrix<T>> columns(kBlock4Layer + 1);
    std::vector<FeatureMap<T>> acts;
    acts.reserve(kBlock4Layer + 1);
    const FeatureMap<T>* prev = &x;
    for (std::size_t i = 0; i <= kBlock4Layer; ++i) {
        acts.push_back(conv_forward(params.layers[i], *prev, true, &columns[i]));
        prev = &acts.back();
    }

    PredMaps<T> out;
    out.pred1 = conv_forward(params.layers[kHead1Layer], acts[kBlock3Layer], false, static_cast<RowMatrix<T>*>(nullptr));
    out.pred2 = conv_forward(params.layers[kHead2Layer], acts[kBlock4Layer], false, static_cast<RowMatrix<T>*>(nullptr));
    out.fused = out.pred1;
    out.fused.data += upsample2x(out.pred2);

    if (cache != nullptr) {
        cache->input = std::move(x);
        cache->columns = std::move(columns);
        cache->activations = std::move(acts);
    }
    return out;
}

template <typename T>
NetParams<T> backward(const NetParams<T>& params, const ForwardCache<T>& cache, const RowMatrix<T>& grad_fused) {
    NetParams<T> grads = NetParams<T>::zeros();
    const auto& acts = cache.activations;
    const FeatureMap<T>& a3 = acts[kBlock3Layer];
    const FeatureMap<T>& a4 = acts[kBlock4Layer];
    if (grad_fused.rows() != kHeadChannels || grad_fused.cols() != a3.height * a3.width) {
        throw ShapeError("fused gradient shape does not match the cached forward pass");
    }

    const RowMatrix<T> grad_pred2 = upsample2x_adjoint(grad_fused, a4.height, a4.width);

    auto head_backward = [&](std::size_t layer, const FeatureMap<T>& in, const RowMatrix<T>& g) {
        grads.layers[layer].weight.noalias() = g * in.data.transpose();
        grads.layers[layer].bias = g.rowwise().sum();
        return RowMatrix<T>(params.layers[layer].weight.transpose() * g);
    };

    std::vector<RowMatrix<T>> grad_act(acts.size());
    grad_act[kBlock3Layer] = head_backward(kHead1Layer, a3, grad_fused);
    grad_act[kBlock4Layer] = head_backward(kHead2Layer, a4, grad_pred2);

    for (std::size_t i = kBlock4Layer + 1; i-- > 0;) {
        RowMatrix<T>& g = grad_act[i];
        if (g.size() == 0) {
            continue;
        }
        g = (acts[i].data.array() > T(0)).select(g, T(0));
        grads.layers[i].weight.noalias() = g * cache.columns[i].transpose();
        grads.layers[i].bias = g.rowwise().sum();
        if (i == 0) {
            break;
        }
        const RowMatrix<T> grad_cols = params.layers[i].weight.transpose() * g;
        FeatureMap<T> gin;
        gin.channels = acts[i - 1].channels;
        gin.height = acts[i - 1].height;
        gin.width = acts[i - 1].width;
        gin.data = RowMatrix<T>::Zero(gin.channels, gin.height * gin.width);
        col2im_add(grad_cols, params.layers[i].shape, acts[i].height, acts[i].width, gin);
        if (grad_act[i - 1].size() == 0) {
            grad_act[i - 1] = std::move(gin.data);
        } else {
            grad_act[i - 1] += gin.data;
        }
    }
    return grads;
}

template <typename T>
void sgd_step(NetParams<T>& params, const NetParams<T>& grads, NetParams<T>& velocity, const SgdConfig& config) {
    const T lr = static_cast<T>(config.lr);
    const T mu = static_cast<T>(config.momentum);
    const T wd = static_cast<T>(config.weight_decay);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        auto& v = velocity.layers[i];
        const auto& g = grads.layers[i];
        v.weight = mu * v.weight - lr * (g.weight + wd * p.weight);
        v.bias = mu * v.bias - lr * (g.bias + wd * p.bias);
        p.weight += v.weight;
        p.bias += v.bias;
    }
}

namespace {

constexpr char kMagic[8] = {'P', 'B', 'X', 'C', 'K', 'P', 'T', '\0'};

template <typename V>
void put(std::ostream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename V>
V get(std::istream& in, const std::filesystem::path& path) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof value);
    if (!in) {
        throw IoError(path.string() + ": truncated checkpoint");
    }
    return value;
}

} // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint: " + path.string());
    }
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.layers.size()));
    for (const auto& l : model.params.layers) {
        put<std::int32_t>(out, l.shape.in);
        put<std::int32_t>(out, l.shape.out);
        put<std::int32_t>(out, l.shape.kernel);
        put<std::int32_t>(out, l.shape.stride);
        out.write(reinterpret_cast<const char*>(l.weight.data()),
                  static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(l.bias.data()),
                  static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.specs.size()));
    for (const auto& s : model.specs) {
        put<double>(out, s.scale);
        put<double>(out, s.aspect);
    }
    if (!out) {
        throw IoError("checkpoint write failed: " + path.string());
    }
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint: " + path.string());
    }
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw FormatError(path.string() + ": not a checkpoint");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto expected = architecture();
    const auto n_layers = get<std::uint32_t>(in, path);
    if (n_layers != expected.size()) {
        throw ShapeError(path.string() + ": checkpoint has " + std::to_string(n_layers) + " layers, expected " +
                         std::to_string(expected.size()));
    }
    Model model;
    model.params = NetParams<float>::zeros();
    for (std::size_t i = 0; i < expected.size(); ++i) {
        ConvShape s;
        s.in = get<std::int32_t>(in, path);
        s.out = get<std::int32_t>(in, path);
        s.kernel = get<std::int32_t>(in, path);
        s.stride = get<std::int32_t>(in, path);
        if (!(s == expected[i])) {
            throw ShapeError(path.string() + ": layer " + std::to_string(i) + " shape mismatch");
        }
        auto& l = model.params.layers[i];
        in.read(reinterpret_cast<char*>(l.weight.data()), static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
        in.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
        if (!in) {
            throw IoError(path.string() + ": truncated checkpoint");
        }
    }
    const auto n_specs = get<std::uint32_t>(in, path);
    if (n_specs != static_cast<std::uint32_t>(kAnchorsPerCell)) {
        throw ShapeError(path.string() + ": checkpoint carries " + std::to_string(n_specs) + " anchor specs");
    }
    for (std::uint32_t i = 0; i < n_specs; ++i) {
        const double scale = get<double>(in, path);
        const double aspect = get<double>(in, path);
        model.specs.push_back({scale, aspect});
    }
    return model;
}

#define POINTBOX_INSTANTIATE(T)                                                                          \
    template struct NetParams<T>;                                                                        \
    template PredMaps<T> forward<T>(const NetParams<T>&, const GrayImage&, ForwardCache<T>*);            \
    template NetParams<T> backward<T>(const NetParams<T>&, const ForwardCache<T>&, const RowMatrix<T>&); \
    template RowMatrix<T> upsample2x<T>(const FeatureMap<T>&);                                           \
    template RowMatrix<T> upsample2x_adjoint<T>(const RowMatrix<T>&, int, int);                          \
    template void sgd_step<T>(NetParams<T>&, const NetParams<T>&, NetParams<T>&, const SgdConfig&);

POINTBOX_INSTANTIATE(float)
POINTBOX_INSTANTIATE(double)

#undef POINTBOX_INSTANTIATE

} // namespace pointbox
