#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "pointbox/error.hpp"
#include "pointbox/tinydet.hpp"

using namespace pointbox;

namespace {

GrayImage random_image(int w, int h, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    GrayImage img(h, w);
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        img.data()[i] = u(rng);
    }
    return img;
}

RowMatrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    RowMatrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

double dot(const RowMatrix<double>& a, const RowMatrix<double>& b) {
    return (a.array() * b.array()).sum();
}

} // namespace

TEST_CASE("forward produces fused maps at stride 8 and 16") {
    std::mt19937_64 rng(1);
    const auto params = NetParams<float>::init(3);
    const auto pred = forward(params, random_image(64, 48, rng));
    CHECK(pred.pred1.channels == kHeadChannels);
    CHECK(pred.pred1.height == 6);
    CHECK(pred.pred1.width == 8);
    CHECK(pred.pred2.height == 3);
    CHECK(pred.pred2.width == 4);
    CHECK(pred.fused.data.rows() == kHeadChannels);
    CHECK(pred.fused.data.cols() == 48);
}

TEST_CASE("fused map is pred1 plus nearest-neighbour upsampled pred2") {
    std::mt19937_64 rng(2);
    const auto params = NetParams<double>::init(5);
    const auto pred = forward(params, random_image(32, 32, rng));
    for (int c : {0, 7, 124}) {
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                CHECK(pred.fused.at(c, y, x) == doctest::Approx(pred.pred1.at(c, y, x) + pred.pred2.at(c, y / 2, x / 2)));
            }
        }
    }
}

TEST_CASE("inputs not divisible by 16 are rejected") {
    std::mt19937_64 rng(3);
    const auto params = NetParams<float>::init(1);
    CHECK_THROWS_AS(forward(params, random_image(40, 32, rng)), ShapeError);
    CHECK_THROWS_AS(forward(params, random_image(32, 24, rng)), ShapeError);
}

TEST_CASE("classification prior starts at the configured bias") {
    const auto params = NetParams<float>::init(9, -2.0);
    const GrayImage blank = GrayImage::Zero(32, 32);
    const auto pred = forward(params, blank);
    for (int t = 0; t < kAnchorsPerCell; ++t) {
        // Zero input still passes through the backbone biases (zero at init).
        CHECK(pred.fused.at(t * kChannelsPerAnchor + kLogit, 0, 0) == doctest::Approx(-2.0).epsilon(1e-6));
    }
}

TEST_CASE("upsample adjoint satisfies <Ux, y> == <x, U^T y>") {
    std::mt19937_64 rng(4);
    FeatureMap<double> x;
    x.channels = 3;
    x.height = 3;
    x.width = 5;
    x.data = random_matrix(3, 15, rng);
    const RowMatrix<double> y = random_matrix(3, 60, rng);
    CHECK(dot(upsample2x(x), y) == doctest::Approx(dot(x.data, upsample2x_adjoint(y, 3, 5))));
}

TEST_CASE("backward matches central differences on every layer") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        auto params = NetParams<double>::init(100 + trial);
        // Larger head weights keep the probe away from the all-flat regime.
        params.layers[kHead1Layer].weight *= 30.0;
        params.layers[kHead2Layer].weight *= 30.0;
        const GrayImage img = random_image(32, 48, rng);
        ForwardCache<double> cache;
        const auto pred = forward(params, img, &cache);
        const RowMatrix<double> g = random_matrix(pred.fused.data.rows(), pred.fused.data.cols(), rng);
        const auto analytic = backward(params, cache, g);
        auto loss = [&](const NetParams<double>& p) { return dot(forward(p, img).fused.data, g); };
        const auto r = oracle::probe_network(params, analytic, loss, 12, 1e-6, 1e-3, 1e-6, rng);
        INFO("worst relative error " << r.worst);
        CHECK(r.failures == 0);
    }
}

TEST_CASE("sgd step follows the momentum and weight decay rule") {
    auto p = NetParams<double>::zeros();
    auto v = NetParams<double>::zeros();
    auto g = NetParams<double>::zeros();
    p.layers[0].weight(0, 0) = 2.0;
    v.layers[0].weight(0, 0) = 0.5;
    g.layers[0].weight(0, 0) = 1.0;
    sgd_step(p, g, v, {0.1, 0.9, 0.01});
    const double expected_v = 0.9 * 0.5 - 0.1 * (1.0 + 0.01 * 2.0);
    CHECK(v.layers[0].weight(0, 0) == doctest::Approx(expected_v));
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(2.0 + expected_v));
}

TEST_CASE("checkpoint round trip is exact") {
    const auto dir = std::filesystem::temp_directory_path() / "pointbox_ckpt_test";
    std::filesystem::create_directories(dir);
    Model m{NetParams<float>::init(42), build_specs(std::vector<double>{4, 8, 16, 32, 64})};
    save_model(dir / "m.bin", m);
    const Model back = load_model(dir / "m.bin");
    REQUIRE(back.specs.size() == m.specs.size());
    for (std::size_t i = 0; i < m.params.layers.size(); ++i) {
        CHECK(back.params.layers[i].weight == m.params.layers[i].weight);
        CHECK(back.params.layers[i].bias == m.params.layers[i].bias);
    }
    CHECK(back.specs[7].scale == m.specs[7].scale);
}

TEST_CASE("checkpoint with a different layer shape is rejected") {
    const auto dir = std::filesystem::temp_directory_path() / "pointbox_ckpt_test";
    std::filesystem::create_directories(dir);
    Model m{NetParams<float>::init(42), build_specs(std::vector<double>{4, 8, 16, 32, 64})};
    save_model(dir / "m.bin", m);
    // Patch layer 0's output-channel field (after magic, version, count, in).
    std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8 + 4 + 4 + 4);
    const std::int32_t bogus = 9;
    f.write(reinterpret_cast<const char*>(&bogus), sizeof bogus);
    f.close();
    CHECK_THROWS_AS(load_model(dir / "m.bin"), ShapeError);
}

TEST_CASE("truncated checkpoint raises IoError") {
    const auto dir = std::filesystem::temp_directory_path() / "pointbox_ckpt_test";
    std::filesystem::create_directories(dir);
    Model m{NetParams<float>::init(42), build_specs(std::vector<double>{4, 8, 16, 32, 64})};
    save_model(dir / "m.bin", m);
    std::filesystem::resize_file(dir / "m.bin", 100);
    CHECK_THROWS_AS(load_model(dir / "m.bin"), IoError);
}
