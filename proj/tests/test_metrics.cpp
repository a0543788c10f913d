#include <doctest.h>

#include <cmath>

#include "ldl/metrics.hpp"
#include "ldl/objectives.hpp"
#include "oracles.hpp"

using namespace ldl;

namespace {
LabelDistribution dist(std::vector<double> v) { return LabelDistribution{std::move(v)}; }
}  // namespace

TEST_CASE("identical distributions give the ideal tuple") {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        auto v = oracle::random_simplex(2 + static_cast<int>(rng.below(10)), rng);
        auto m = evaluate(dist(v), dist(v));
        CHECK(m[0] == 0.0);
        CHECK(m[1] == 0.0);
        CHECK(m[2] == 0.0);
        CHECK(m[3] == 0.0);
        CHECK(m[4] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m[5] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("hand-evaluated tuple for ([1,0],[0.5,0.5])") {
    auto m = evaluate(dist({1.0, 0.0}), dist({0.5, 0.5}));
    CHECK(m[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(m[1] == doctest::Approx(1.05409).epsilon(1e-5));        // sqrt(1/9 + 1)
    CHECK(m[2] == doctest::Approx(1.33333).epsilon(1e-5));        // 1/3 + 1
    CHECK(m[3] == doctest::Approx(0.69315).epsilon(1e-5));        // ln 2
    CHECK(m[4] == doctest::Approx(0.70711).epsilon(1e-5));        // 1/sqrt(2)
    CHECK(m[5] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("all six metrics agree with the naive oracles on 10k random pairs") {
    Rng rng(4242);
    double worst = 0.0;
    for (int t = 0; t < 10000; ++t) {
        const int L = 2 + static_cast<int>(rng.below(14));
        auto a = oracle::random_simplex(L, rng);
        auto b = oracle::random_simplex(L, rng);
        auto got = evaluate(dist(a), dist(b));
        auto want = oracle::all_metrics(a, b);
        for (int i = 0; i < 6; ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("intersection + l1/2 = 1 and range bounds hold on random pairs") {
    Rng rng(77);
    for (int t = 0; t < 10000; ++t) {
        const int L = 2 + static_cast<int>(rng.below(14));
        auto a = oracle::random_simplex(L, rng);
        auto b = oracle::random_simplex(L, rng);
        auto m = evaluate(dist(a), dist(b));
        const double l1 = l1_loss(a, b);
        CHECK(std::fabs(m[5] + 0.5 * l1 - 1.0) <= 1e-12);
        CHECK(m[0] >= 0.0);
        CHECK(m[0] <= 1.0);
        CHECK(m[1] >= 0.0);
        CHECK(m[1] <= std::sqrt(static_cast<double>(L)) + 1e-12);
        CHECK(m[2] >= 0.0);
        CHECK(m[2] <= static_cast<double>(L) + 1e-12);
        CHECK(m[3] >= -1e-12);
        CHECK(m[4] >= 0.0);
        CHECK(m[4] <= 1.0 + 1e-12);
        CHECK(m[5] >= 0.0);
        CHECK(m[5] <= 1.0 + 1e-12);
    }
}

TEST_CASE("evaluate validates its inputs") {
    CHECK_THROWS_AS(evaluate(dist({0.5, 0.5}), dist({1.0, 0.0, 0.0})), ShapeError);
    CHECK_THROWS_AS(evaluate(dist({0.7, 0.7}), dist({0.5, 0.5})), DataError);
}

TEST_CASE("aggregate: hand case and degenerate fold") {
    SUBCASE("single fold, single sample has zero std") {
        std::vector<std::vector<MetricTuple>> folds{{MetricTuple{1, 2, 3, 4, 5, 6}}};
        auto rep = aggregate(folds);
        for (int i = 0; i < 6; ++i) {
            CHECK(rep.stats[i].mean == doctest::Approx(i + 1.0));
            CHECK(rep.stats[i].std == 0.0);
        }
        CHECK(rep.folds == 1);
        CHECK(rep.samples == 1);
    }
    SUBCASE("two folds with means 0.1 and 0.3") {
        MetricTuple a{0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
        MetricTuple b{0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
        std::vector<std::vector<MetricTuple>> folds{{a}, {b}};
        auto rep = aggregate(folds);
        CHECK(rep.stats[0].mean == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(rep.stats[0].std == doctest::Approx(0.1414213562).epsilon(1e-9));
    }
    SUBCASE("permutation invariance across folds") {
        Rng rng(3);
        std::vector<std::vector<MetricTuple>> folds;
        for (int f = 0; f < 4; ++f) {
            std::vector<MetricTuple> fold;
            for (int s = 0; s < 3; ++s) {
                MetricTuple t;
                for (auto& x : t) x = rng.uniform();
                fold.push_back(t);
            }
            folds.push_back(fold);
        }
        auto rep1 = aggregate(folds);
        std::swap(folds[0], folds[3]);
        std::swap(folds[1], folds[2]);
        auto rep2 = aggregate(folds);
        for (int i = 0; i < 6; ++i) {
            CHECK(rep1.stats[i].mean == doctest::Approx(rep2.stats[i].mean).epsilon(1e-12));
            CHECK(rep1.stats[i].std == doctest::Approx(rep2.stats[i].std).epsilon(1e-12));
        }
    }
    SUBCASE("empty input is an error") {
        CHECK_THROWS_AS(aggregate({}), DataError);
        CHECK_THROWS_AS(aggregate({{}}), DataError);
    }
}

TEST_CASE("report serialization carries all six metrics") {
    std::vector<std::vector<MetricTuple>> folds{{MetricTuple{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}}};
    auto rep = aggregate(folds);
    rep.dataset = "unit";
    rep.algorithm = "idr";
    auto json = rep.to_json();
    for (const char* name : kMetricNames) CHECK(json.find(name) != std::string::npos);
    CHECK(json.find("\"schema_version\": 1") != std::string::npos);
    auto row = rep.csv_row();
    CHECK(row.rfind("idr,unit,1,1", 0) == 0);
    CHECK(MetricsReport::csv_header().find("kl_mean") != std::string::npos);
}
