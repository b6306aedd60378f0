#include <doctest.h>

#include <algorithm>
#include <random>

#include "pointbox/curriculum.hpp"
#include "pointbox/error.hpp"

using namespace pointbox;

TEST_CASE("moments hand values") {
    const auto m = dataset_moments(std::vector<double>{4, 4, 8, 8});
    CHECK(m.mean == doctest::Approx(6));
    CHECK(m.stddev == doctest::Approx(2));
    CHECK_THROWS_AS(dataset_moments(std::vector<double>{5, 5, 5}), DegenerateDataset);
}

TEST_CASE("moments match a two-pass oracle on 10^4 samples") {
    std::mt19937_64 rng(1);
    std::lognormal_distribution<double> d(2.5, 0.4);
    std::vector<double> v(10000);
    for (auto& x : v) {
        x = d(rng);
    }
    long double sum = 0;
    for (double x : v) {
        sum += x;
    }
    const double mean = static_cast<double>(sum / v.size());
    long double sq = 0;
    for (double x : v) {
        sq += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(static_cast<double>(sq / v.size()));
    const auto m = dataset_moments(v);
    CHECK(m.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(m.stddev == doctest::Approx(sd).epsilon(1e-12));
}

TEST_CASE("difficulty hand values") {
    const Moments m{10, 2};
    CHECK(difficulty("a", std::vector<double>{10, 10, 10}, m).difficulty == 0.0);
    CHECK(difficulty("b", std::vector<double>{12}, m).difficulty == doctest::Approx(1 - std::exp(-0.5)));
    CHECK(difficulty("b", std::vector<double>{12}, m).difficulty == doctest::Approx(0.3935).epsilon(1e-4));
    const double a = difficulty("a", std::vector<double>{10, 10}, m).difficulty;
    const double b = difficulty("b", std::vector<double>{16, 16}, m).difficulty;
    CHECK(a < b);
}

TEST_CASE("TL lies in [0, 1) and is zero only at the mean") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 60);
    const Moments m{20, 5};
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> d(1 + i % 10);
        for (auto& x : d) {
            x = u(rng);
        }
        const double tl = difficulty("x", d, m).difficulty;
        CHECK(tl >= 0.0);
        CHECK(tl < 1.0);
        const bool all_mean = std::all_of(d.begin(), d.end(), [](double x) { return x == 20.0; });
        CHECK((tl == 0.0) == all_mean);
    }
}

TEST_CASE("TL saturates below one far from the mean") {
    const Moments m{12, 3};
    const double far = difficulty("far", std::vector<double>{40, 41}, m).difficulty;
    CHECK(far < 1.0);
    CHECK(far == kMaxDifficulty);
    CHECK(difficulty("empty", std::vector<double>{}, m).difficulty == kMaxDifficulty);
}

TEST_CASE("fold sizes") {
    auto make = [](int n) {
        std::vector<CurriculumScore> s;
        for (int i = 0; i < n; ++i) {
            s.push_back({"img" + std::to_string(i), 0.01 * (n - i), 0});
        }
        return s;
    };
    auto sizes = [](const FoldAssignment& f) {
        std::vector<int> out(3, 0);
        for (const auto& [id, fold] : f) {
            ++out[static_cast<std::size_t>(fold - 1)];
        }
        return out;
    };
    CHECK(sizes(split_folds(make(9), 3)) == std::vector<int>{3, 3, 3});
    CHECK(sizes(split_folds(make(10), 3)) == std::vector<int>{4, 3, 3});
    const auto f = split_folds(make(9), 3);
    CHECK(f.at("img8") == 1);  // lowest difficulty
    CHECK(f.at("img0") == 3);
    CHECK_THROWS_AS(split_folds(make(2), 3), TooFewImages);
}

TEST_CASE("fold assignment ignores input order and monotone transforms") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<CurriculumScore> s;
    for (int i = 0; i < 31; ++i) {
        s.push_back({"id" + std::to_string(i), std::round(u(rng) * 10) / 10, 0});  // ties on purpose
    }
    const auto base = split_folds(s, 3);
    for (int k = 0; k < 20; ++k) {
        std::shuffle(s.begin(), s.end(), rng);
        CHECK(split_folds(s, 3) == base);
    }
    auto transformed = s;
    for (auto& x : transformed) {
        x.difficulty = std::exp(3 * x.difficulty) - 7;
    }
    CHECK(split_folds(transformed, 3) == base);
}

TEST_CASE("working set schedule") {
    CHECK(active_folds(0, 10) == std::set<int>{1});
    CHECK(active_folds(9, 10) == std::set<int>{1});
    CHECK(active_folds(10, 10) == std::set<int>{1, 2});
    CHECK(active_folds(49, 10) == std::set<int>{1, 2, 3});
    std::set<int> prev;
    for (int e = 0; e < 100; ++e) {
        const auto cur = active_folds(e, 7);
        CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        prev = cur;
    }
}
