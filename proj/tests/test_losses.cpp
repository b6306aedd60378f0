#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "pointbox/losses.hpp"

using namespace pointbox;

namespace {

BandStats band(double mw, double sw, double mh, double sh, int count = 5) {
    BandStats b;
    b.mean_w = mw;
    b.std_w = sw;
    b.mean_h = mh;
    b.std_h = sh;
    b.count = count;
    return b;
}

RegTerm random_term(std::mt19937_64& rng, bool constrained) {
    std::uniform_real_distribution<double> ext(4, 40);
    std::uniform_real_distribution<double> off(-1.5, 1.5);
    std::uniform_real_distribution<double> pos(0, 100);
    RegTerm t;
    t.anchor = {pos(rng), pos(rng), ext(rng), ext(rng)};
    t.pred = {off(rng), off(rng), off(rng), off(rng)};
    t.target = {t.anchor.cx + off(rng) * 4, t.anchor.cy + off(rng) * 4, ext(rng), ext(rng)};
    std::uniform_real_distribution<double> mean(5, 30);
    std::uniform_real_distribution<double> sd(0, 4);
    t.band = band(mean(rng), sd(rng), mean(rng), sd(rng), constrained ? 4 : 1);
    return t;
}

double total(const std::vector<RegTerm>& terms, const RegLossConfig& cfg) {
    return reg_loss(terms, cfg).reg_total;
}

} // namespace

TEST_CASE("band stats hand values") {
    const std::vector<Boxd> same{{10, 4, 6, 6}, {30, 4, 6, 6}, {50, 12, 6, 6}};
    const auto bands = band_stats(same, 4, 8);
    CHECK(bands[0].mean_w == doctest::Approx(6));
    CHECK(bands[0].std_w == doctest::Approx(0));
    CHECK(bands[0].count == 3);

    const std::vector<Boxd> pair{{10, 4, 4, 4}, {30, 4, 8, 8}};
    const auto b2 = band_stats(pair, 4, 8);
    CHECK(b2[0].mean_w == doctest::Approx(6));
    CHECK(b2[0].std_w == doctest::Approx(2));
    CHECK(b2[1].count == 2);  // row 1 sees row 0
    CHECK(b2[2].count == 0);
    CHECK_FALSE(b2[2].constrained());
    CHECK_FALSE(b2[3].constrained());
}

TEST_CASE("empty band imposes no constraint") {
    std::mt19937_64 rng(1);
    RegLossConfig cfg;
    for (int i = 0; i < 200; ++i) {
        RegTerm t = random_term(rng, false);
        t.band = BandStats{};
        const auto l = reg_loss(std::vector<RegTerm>{t}, cfg);
        CHECK(l.lw == 0);
        CHECK(l.lh == 0);
        CHECK(l.reg_grad[0].dw == 0);
        CHECK(l.reg_grad[0].dh == 0);
    }
}

TEST_CASE("band locality: a box in row i only affects rows i-1..i+1") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 128);
    std::uniform_real_distribution<double> e(3, 20);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Boxd> boxes(30);
        for (auto& b : boxes) {
            b = {u(rng), u(rng), e(rng), e(rng)};
        }
        const auto before = band_stats(boxes, 16, 8);
        const int row = grid_row(boxes[0].cy, 16, 8);
        boxes[0].w *= 1.7;
        boxes[0].h *= 0.6;
        const auto after = band_stats(boxes, 16, 8);
        for (int r = 0; r < 16; ++r) {
            if (std::abs(r - row) > 1) {
                CHECK(before[static_cast<std::size_t>(r)].mean_w == after[static_cast<std::size_t>(r)].mean_w);
                CHECK(before[static_cast<std::size_t>(r)].std_h == after[static_cast<std::size_t>(r)].std_h);
            }
        }
    }
}

TEST_CASE("interior prediction at the pseudo center has zero loss and gradient") {
    RegTerm t;
    t.anchor = {20, 20, 10, 10};
    t.target = {20, 20, 12, 12};
    t.pred = {0, 0, std::log(1.1), std::log(0.95)};
    t.band = band(10, 1, 10, 1);
    const auto l = reg_loss(std::vector<RegTerm>{t});
    CHECK(l.reg_total == 0);
    CHECK(l.reg_grad[0].dx == 0);
    CHECK(l.reg_grad[0].dw == 0);
}

TEST_CASE("width twice the band mean with zero spread") {
    RegTerm t;
    t.anchor = {20, 20, 10, 10};
    t.target = t.anchor;
    t.pred = {0, 0, std::log(2.0), 0};
    t.band = band(10, 0, 10, 0);
    const auto l = reg_loss(std::vector<RegTerm>{t});
    CHECK(l.lw == doctest::Approx(std::log(2.0) * std::log(2.0)));
    CHECK(l.reg_grad[0].dw == doctest::Approx(2 * std::log(2.0)));
    CHECK(l.lh == 0);
}

TEST_CASE("lower bound is floored at one pixel") {
    const auto b = width_bounds(band(2, 3, 2, 3), 1.0);
    CHECK(b.lower == 1.0);
    CHECK(b.upper == doctest::Approx(11));
}

TEST_CASE("reg_total is exactly the sum of its parts") {
    std::mt19937_64 rng(3);
    for (auto mode : {RegressionMode::Classic, RegressionMode::LocallyConstrained}) {
        for (int i = 0; i < 200; ++i) {
            std::vector<RegTerm> terms;
            for (int k = 0; k < 1 + i % 7; ++k) {
                terms.push_back(random_term(rng, true));
            }
            RegLossConfig cfg;
            cfg.mode = mode;
            const auto l = reg_loss(terms, cfg);
            CHECK(l.reg_total == l.lxy + l.lw + l.lh);
        }
    }
}

TEST_CASE("reg gradients match central differences") {
    std::mt19937_64 rng(4);
    for (auto mode : {RegressionMode::Classic, RegressionMode::LocallyConstrained}) {
        for (auto space : {ExtentSpace::Log, ExtentSpace::Pixel}) {
            RegLossConfig cfg;
            cfg.mode = mode;
            cfg.space = space;
            int failures = 0;
            for (int i = 0; i < 1000; ++i) {
                std::vector<RegTerm> terms{random_term(rng, true), random_term(rng, i % 3 != 0)};
                const auto l = reg_loss(terms, cfg);
                for (std::size_t k = 0; k < terms.size(); ++k) {
                    for (int c = 0; c < 4; ++c) {
                        auto at = [&](double delta) {
                            auto copy = terms;
                            double* p[4] = {&copy[k].pred.dx, &copy[k].pred.dy, &copy[k].pred.dw, &copy[k].pred.dh};
                            *p[c] += delta;
                            return total(copy, cfg);
                        };
                        const double h = 1e-5;
                        const double numeric = (at(h) - at(-h)) / (2 * h);
                        const double g[4] = {l.reg_grad[k].dx, l.reg_grad[k].dy, l.reg_grad[k].dw, l.reg_grad[k].dh};
                        failures += oracle::close_rel(g[c], numeric, 1e-4, 1e-7) ? 0 : 1;
                    }
                }
            }
            CHECK(failures == 0);
        }
    }
}

TEST_CASE("dead zone: 10^4 interior samples give zero extent loss and gradient") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto space : {ExtentSpace::Log, ExtentSpace::Pixel}) {
        RegLossConfig cfg;
        cfg.space = space;
        for (int i = 0; i < 10000; ++i) {
            RegTerm t = random_term(rng, true);
            const auto wb = width_bounds(t.band, cfg.lower_floor);
            const auto hb = height_bounds(t.band, cfg.lower_floor);
            const double gw = wb.lower + u(rng) * (wb.upper - wb.lower);
            const double gh = hb.lower + u(rng) * (hb.upper - hb.lower);
            t.pred.dw = std::log(gw / t.anchor.w);
            t.pred.dh = std::log(gh / t.anchor.h);
            if (std::abs(t.pred.dw) > kDeltaClamp || std::abs(t.pred.dh) > kDeltaClamp) {
                continue;
            }
            const auto l = reg_loss(std::vector<RegTerm>{t}, cfg);
            CHECK(l.lw == 0);
            CHECK(l.lh == 0);
            CHECK(l.reg_grad[0].dw == 0);
            CHECK(l.reg_grad[0].dh == 0);
        }
    }
}

TEST_CASE("one-sided monotonicity outside the band") {
    RegTerm t;
    t.anchor = {20, 20, 10, 10};
    t.target = t.anchor;
    t.band = band(10, 1, 10, 1);
    double prev = -1;
    for (double gw = 13.01; gw < 60; gw += 0.5) {
        t.pred.dw = std::log(gw / 10);
        const double lw = reg_loss(std::vector<RegTerm>{t}).lw;
        CHECK(lw >= prev);
        prev = lw;
    }
    prev = -1;
    for (double gw = 6.99; gw > 1; gw -= 0.25) {
        t.pred.dw = std::log(gw / 10);
        const double lw = reg_loss(std::vector<RegTerm>{t}).lw;
        CHECK(lw >= prev);
        prev = lw;
    }
}

TEST_CASE("cls loss hand values") {
    const auto a = cls_loss(std::vector<double>{0.0}, std::vector<int>{1});
    CHECK(a.loss == doctest::Approx(std::log(2.0)));
    CHECK(a.grad[0] == doctest::Approx(-0.5));
    const auto b = cls_loss(std::vector<double>{20.0}, std::vector<int>{1});
    CHECK(b.loss == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(std::isfinite(bce(-800, 1)));
    CHECK(std::isfinite(bce(800, 0)));
}

TEST_CASE("cls gradient matches central differences") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 3);
    int failures = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> logits(1 + i % 9);
        std::vector<int> labels(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k) {
            logits[k] = n(rng);
            labels[k] = static_cast<int>(rng() % 2);
        }
        const auto l = cls_loss(logits, labels);
        for (std::size_t k = 0; k < logits.size(); ++k) {
            auto at = [&](double d) {
                auto c = logits;
                c[k] += d;
                return cls_loss(c, labels).loss;
            };
            const double numeric = (at(1e-5) - at(-1e-5)) / 2e-5;
            failures += oracle::close_rel(l.grad[k], numeric, 1e-4, 1e-7) ? 0 : 1;
        }
    }
    CHECK(failures == 0);
}

TEST_CASE("ohem selection sizes") {
    std::vector<double> losses(200, 0.0);
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < 100; ++i) {
        losses[i + 50] = static_cast<double>(i);
        negatives.push_back(i + 50);
    }
    const auto six = ohem_select(losses, negatives, 2);
    CHECK(six == std::vector<std::size_t>{149, 148, 147, 146, 145, 144});
    CHECK(ohem_select(losses, negatives, 0).size() == 8);
    CHECK(ohem_select(losses, negatives, 1000).size() == 100);

    std::vector<double> many(2000, 1.0);
    std::vector<std::size_t> all(2000);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(ohem_select(many, all, 500).size() == 256);
}

TEST_CASE("ohem ties break by ascending index and match a sort oracle") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> losses(300);
        for (auto& l : losses) {
            l = static_cast<double>(rng() % 5);  // heavy ties
        }
        std::vector<std::size_t> negatives;
        for (std::size_t i = 0; i < losses.size(); ++i) {
            if (rng() % 3 != 0) {
                negatives.push_back(i);
            }
        }
        const std::size_t npos = rng() % 30;
        auto sorted = negatives;
        std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
            return losses[a] > losses[b] || (losses[a] == losses[b] && a < b);
        });
        const std::size_t want = std::min<std::size_t>(
            {npos == 0 ? 8 : static_cast<std::size_t>(std::ceil(3.0 * static_cast<double>(npos))), 256,
             negatives.size()});
        sorted.resize(want);
        CHECK(ohem_select(losses, negatives, npos) == sorted);
    }
}
