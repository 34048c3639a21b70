// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "timl/errors.hpp"
#include "timl/metrics.hpp"
#include "timl/rng.hpp"

using namespace timl;

namespace {

// brute-force pairwise counting: P(random positive outranks random negative),
// ties half
double auc_bruteforce(std::span<const double> scores, std::span<const double> labels) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0.0) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0) continue;
            pairs += 1;
            if (scores[i] > scores[j]) wins += 1;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

} // namespace

TEST_CASE("auc_roc examples") {
    std::vector<double> s1 = {0.9, 0.8, 0.1}, y1 = {1, 1, 0};
    CHECK(auc_roc(s1, y1) == 1.0);
    std::vector<double> s2 = {0.9, 0.2, 0.6, 0.4}, y2 = {1, 0, 0, 1};
    CHECK(auc_roc(s2, y2) == 0.75); // 3 of 4 pairs correct
    std::vector<double> s3 = {0.5, 0.5, 0.5, 0.5}, y3 = {1, 0, 1, 0};
    CHECK(auc_roc(s3, y3) == 0.5); // all ties
    std::vector<double> s4 = {1, 2}, y4 = {1, 1};
    CHECK_THROWS_AS(auc_roc(s4, y4), Error);
}

TEST_CASE("auc_roc equals brute-force pairwise counting on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t n = 2 + rng.below(60);
        std::vector<double> scores(n), labels(n);
        bool tie_heavy = trial % 3 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = tie_heavy ? std::round(rng.uniform() * 4) / 4 : rng.uniform();
            labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        labels[0] = 1.0;
        labels[n - 1] = 0.0;
        CHECK(auc_roc(scores, labels) == doctest::Approx(auc_bruteforce(scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("f1_at_half") {
    std::vector<double> perfect_s = {0.9, 0.8, 0.1, 0.2}, perfect_y = {1, 1, 0, 0};
    CHECK(f1_at_half(perfect_s, perfect_y) == 1.0);
    // zero predicted positives -> 0 by convention
    std::vector<double> none_s = {0.1, 0.2, 0.3}, none_y = {1, 1, 0};
    CHECK(f1_at_half(none_s, none_y) == 0.0);
    // 2 TP, 1 FP, 1 FN -> 2/3
    std::vector<double> s = {0.9, 0.8, 0.7, 0.1}, y = {1, 1, 0, 1};
    CHECK(f1_at_half(s, y) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // threshold is inclusive: score exactly 0.5 predicts positive
    std::vector<double> s2 = {0.5}, y2 = {1};
    CHECK(f1_at_half(s2, y2) == 1.0);
}

TEST_CASE("rmse") {
    std::vector<double> a = {1, 2, 3}, b = {1, 2, 3};
    CHECK(rmse(a, b) == 0.0);
    std::vector<double> p = {3, -4}, t = {0, 0};
    CHECK(rmse(p, t) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-14));
    std::vector<double> short_v = {1};
    CHECK_THROWS_AS(rmse(p, short_v), ShapeError);
    // mean of per-county RMSEs differs from pooled RMSE in general (Jensen gap)
    std::vector<double> c1p = {1, 1}, c1t = {0, 0}; // county RMSE 1
    std::vector<double> c2p = {3, 3}, c2t = {0, 0}; // county RMSE 3
    double county_mean = (rmse(c1p, c1t) + rmse(c2p, c2t)) / 2;
    std::vector<double> pooled_p = {1, 1, 3, 3}, pooled_t = {0, 0, 0, 0};
    CHECK(county_mean == 2.0);
    CHECK(rmse(pooled_p, pooled_t) == doctest::Approx(std::sqrt(5.0)));
    CHECK(county_mean != rmse(pooled_p, pooled_t));
}

TEST_CASE("mean_stderr") {
    std::vector<double> v = {1, 2, 3, 4};
    MeanStderr ms = mean_stderr(v);
    CHECK(ms.mean == 2.5);
    CHECK(ms.n == 4);
    // sample std of {1,2,3,4} is sqrt(5/3); stderr divides by sqrt(4)
    CHECK(ms.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
    std::vector<double> single = {7};
    CHECK(mean_stderr(single).stderr_ == 0.0);
}
