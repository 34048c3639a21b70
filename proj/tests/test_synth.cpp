// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "timl/synth.hpp"

using namespace timl;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("sine tasks follow y = A sin(x + phase) and the stated ranges") {
    SynthSpec spec;
    spec.family = SynthFamily::sine_regression;
    spec.num_tasks = 20;
    spec.points_per_task = 32;
    spec.noise_sd = 0.0; // exact reconstruction
    spec.seed = 5;
    TaskBundle bundle = gen_sine_tasks(spec);
    REQUIRE(bundle.tasks.size() == 20);
    for (const Task& t : bundle.tasks) {
        double amplitude = t.info.values[0];
        double phase = std::atan2(t.info.values[1], t.info.values[2]);
        CHECK(amplitude >= 0.1);
        CHECK(amplitude <= 5.0);
        CHECK(phase >= 0.0);
        CHECK(phase <= M_PI);
        for (std::int64_t r = 0; r < t.rows(); ++r) {
            double x = t.features[static_cast<std::size_t>(r)];
            CHECK(x >= -5.0);
            CHECK(x <= 5.0);
            CHECK(t.labels[static_cast<std::size_t>(r)] ==
                  doctest::Approx(amplitude * std::sin(x + phase)).epsilon(1e-12));
        }
    }
    // A=1, phase=0, x=0 -> y=0 (formula fixed point)
    CHECK(1.0 * std::sin(0.0 + 0.0) == 0.0);
}

TEST_CASE("metadata arms differ only in TaskInfo") {
    SynthSpec spec;
    spec.family = SynthFamily::sine_regression;
    spec.num_tasks = 8;
    spec.points_per_task = 16;
    spec.seed = 77;
    spec.metadata_informative = true;
    TaskBundle informative = gen_sine_tasks(spec);
    spec.metadata_informative = false;
    TaskBundle uninformative = gen_sine_tasks(spec);
    for (std::size_t i = 0; i < informative.tasks.size(); ++i) {
        CHECK(informative.tasks[i].features == uninformative.tasks[i].features);
        CHECK(informative.tasks[i].labels == uninformative.tasks[i].labels);
        CHECK(uninformative.tasks[i].info.values == std::vector<double>{0.0, 0.0, 0.0});
    }
}

TEST_CASE("same seed regenerates byte-identical bundles on disk") {
    SynthSpec spec;
    spec.family = SynthFamily::sine_regression;
    spec.num_tasks = 5;
    spec.points_per_task = 12;
    spec.seed = 31;
    auto dir_a = std::filesystem::temp_directory_path() / "timl_synth_a";
    auto dir_b = std::filesystem::temp_directory_path() / "timl_synth_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    save_bundle(gen_sine_tasks(spec), dir_a.string());
    save_bundle(gen_sine_tasks(spec), dir_b.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
        auto name = entry.path().filename();
        CHECK(read_file(entry.path()) == read_file(dir_b / name));
    }
    // a different seed changes the data
    spec.seed = 32;
    save_bundle(gen_sine_tasks(spec), dir_b.string());
    CHECK(read_file(dir_a / "task_0000.csv") != read_file(dir_b / "task_0000.csv"));
}

TEST_CASE("sphere classification") {
    SynthSpec spec;
    spec.family = SynthFamily::sphere_classification;
    spec.num_tasks = 12;
    spec.points_per_task = 60;
    spec.feature_dim = 6;
    spec.separation_target = 0.95;
    spec.seed = 13;
    TaskBundle bundle = gen_sphere_classification(spec);

    SUBCASE("balanced labels and unit-norm spatial info") {
        for (const Task& t : bundle.tasks) {
            int pos = 0;
            for (double y : t.labels) pos += y == 1.0;
            CHECK(pos == 30);
            double n = 0;
            for (double v : t.info.values) n += v * v;
            CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("generating rule is a pure function of the center") {
        std::array<double, 3> c = {0.3, -0.5, std::sqrt(1 - 0.09 - 0.25)};
        CHECK(smooth_rule_weights(spec, c) == smooth_rule_weights(spec, c));
        std::array<double, 3> anti = {-c[0], -c[1], -c[2]};
        auto w = smooth_rule_weights(spec, c);
        auto wa = smooth_rule_weights(spec, anti);
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(-wa[i]));
    }
    SUBCASE("antipodal centers give maximally distant task infos") {
        // infos are unit vectors; the maximum pairwise distance is 2
        double worst = 0;
        for (const Task& a : bundle.tasks)
            for (const Task& b : bundle.tasks) {
                double d = 0;
                for (int i = 0; i < 3; ++i) {
                    double diff = a.info.values[static_cast<std::size_t>(i)] -
                                  b.info.values[static_cast<std::size_t>(i)];
                    d += diff * diff;
                }
                worst = std::max(worst, std::sqrt(d));
            }
        CHECK(worst <= 2.0 + 1e-12);
    }
    SUBCASE("rule accuracy meets the separation target (brute-force oracle)") {
        for (const Task& t : bundle.tasks) {
            std::array<double, 3> center = {t.info.values[0], t.info.values[1], t.info.values[2]};
            auto w = smooth_rule_weights(spec, center);
            // rule predictions: score above the task's balanced threshold
            std::vector<double> scores(static_cast<std::size_t>(t.rows()));
            for (std::int64_t r = 0; r < t.rows(); ++r) {
                double s = 0;
                for (int j = 0; j < spec.feature_dim; ++j)
                    s += w[static_cast<std::size_t>(j)] *
                         t.features[static_cast<std::size_t>(r * spec.feature_dim + j)];
                scores[static_cast<std::size_t>(r)] = s;
            }
            std::vector<double> sorted = scores;
            std::nth_element(sorted.begin(), sorted.begin() + t.rows() / 2, sorted.end());
            double threshold = sorted[static_cast<std::size_t>(t.rows() / 2)];
            int correct = 0;
            for (std::int64_t r = 0; r < t.rows(); ++r) {
                double pred = scores[static_cast<std::size_t>(r)] >= threshold ? 1.0 : 0.0;
                correct += pred == t.labels[static_cast<std::size_t>(r)];
            }
            double acc = static_cast<double>(correct) / static_cast<double>(t.rows());
            CHECK(acc >= spec.separation_target - 1e-9);
        }
    }
}

TEST_CASE("imbalanced mix") {
    SynthSpec spec;
    spec.family = SynthFamily::imbalanced_mix;
    spec.num_tasks = 30;
    spec.points_per_task = 40;
    spec.feature_dim = 5;
    spec.easy_ratio = 0.9;
    spec.seed = 21;
    TaskBundle bundle = gen_imbalanced_mix(spec);

    SUBCASE("exactly round(ratio*N) easy tasks, ids disjoint") {
        int easy = 0, hard = 0;
        std::set<std::string> easy_ids, hard_ids;
        for (const Task& t : bundle.tasks) {
            if (t.has_tag("easy")) {
                ++easy;
                easy_ids.insert(t.id);
            }
            if (t.has_tag("hard")) {
                ++hard;
                hard_ids.insert(t.id);
            }
        }
        CHECK(easy == 27);
        CHECK(hard == 3);
        for (const auto& id : easy_ids) CHECK(hard_ids.count(id) == 0);
    }
    SUBCASE("easy tasks share the large-margin rule") {
        auto w = shared_easy_rule(spec);
        for (const Task& t : bundle.tasks) {
            if (!t.has_tag("easy")) continue;
            for (std::int64_t r = 0; r < t.rows(); ++r) {
                double s = 0;
                for (int j = 0; j < spec.feature_dim; ++j)
                    s += w[static_cast<std::size_t>(j)] *
                         t.features[static_cast<std::size_t>(r * spec.feature_dim + j)];
                CHECK(std::fabs(s) >= spec.easy_margin - 1e-12);
                CHECK((s > 0 ? 1.0 : 0.0) == t.labels[static_cast<std::size_t>(r)]);
            }
        }
    }
    SUBCASE("hard tasks follow their center's rule at the small margin") {
        for (const Task& t : bundle.tasks) {
            if (!t.has_tag("hard")) continue;
            std::array<double, 3> center = {t.info.values[0], t.info.values[1], t.info.values[2]};
            auto w = smooth_rule_weights(spec, center);
            for (std::int64_t r = 0; r < t.rows(); ++r) {
                double s = 0;
                for (int j = 0; j < spec.feature_dim; ++j)
                    s += w[static_cast<std::size_t>(j)] *
                         t.features[static_cast<std::size_t>(r * spec.feature_dim + j)];
                CHECK(std::fabs(s) >= spec.hard_margin - 1e-12);
                CHECK((s > 0 ? 1.0 : 0.0) == t.labels[static_cast<std::size_t>(r)]);
            }
        }
    }
}
