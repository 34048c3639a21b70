// SPDX-License-Identifier: Apache-2.0
#include "timl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "timl/rng.hpp"

namespace timl {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

std::string task_name(const char* prefix, int i) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, i);
    return buf;
}

std::array<double, 3> random_unit3(Rng& rng) {
    while (true) {
        std::array<double, 3> v = {rng.normal(), rng.normal(), rng.normal()};
        double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

BoundingBox point_bbox(const std::array<double, 3>& unit) {
    double lat = std::asin(std::clamp(unit[2], -1.0, 1.0)) * kRadToDeg;
    double lon = std::atan2(unit[1], unit[0]) * kRadToDeg;
    return {lat, lat, lon, lon};
}

// smooth map from a sphere center to a unit rule vector in feature space
std::vector<double> rule_from_center(const std::vector<double>& projection, int feature_dim,
                                     const std::array<double, 3>& center) {
    std::vector<double> w(static_cast<std::size_t>(feature_dim), 0.0);
    double norm = 0.0;
    for (int i = 0; i < feature_dim; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j)
            acc += projection[static_cast<std::size_t>(i * 3 + j)] * center[static_cast<std::size_t>(j)];
        w[static_cast<std::size_t>(i)] = acc;
        norm += acc * acc;
    }
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
    return w;
}

// n/2 rows on each side of the rule, each at least `margin` from the boundary
Task margin_task(const std::string& id, const std::vector<double>& w, int n_points, double margin,
                 Rng& rng) {
    int d = static_cast<int>(w.size());
    Task t;
    t.id = id;
    t.kind = TaskKind::classification;
    t.feature_dim = d;
    t.timesteps = 0;
    int per_side = n_points / 2;
    for (int side = 0; side < 2; ++side) {
        double sign = side == 0 ? 1.0 : -1.0;
        for (int i = 0; i < per_side; ++i) {
            std::vector<double> x(static_cast<std::size_t>(d));
            double score;
            do {
                for (double& v : x) v = rng.normal();
                score = 0.0;
                for (int j = 0; j < d; ++j) score += w[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
            } while (sign * score < margin);
            t.features.insert(t.features.end(), x.begin(), x.end());
            t.labels.push_back(side == 0 ? 1.0 : 0.0);
        }
    }
    return t;
}

} // namespace

const char* synth_family_name(SynthFamily f) {
    switch (f) {
    case SynthFamily::sine_regression: return "sine";
    case SynthFamily::sphere_classification: return "sphere";
    case SynthFamily::imbalanced_mix: return "imbalanced";
    }
    return "?";
}

SynthFamily synth_family_from_name(const std::string& name) {
    if (name == "sine") return SynthFamily::sine_regression;
    if (name == "sphere") return SynthFamily::sphere_classification;
    if (name == "imbalanced") return SynthFamily::imbalanced_mix;
    throw ConfigError("unknown synth family '" + name + "'");
}

void SynthSpec::validate() const {
    if (num_tasks < 1) throw ConfigError("synth: num_tasks must be >= 1");
    if (points_per_task < 4) throw ConfigError("synth: points_per_task must be >= 4");
    if (noise_sd < 0) throw ConfigError("synth: noise_sd must be >= 0");
    if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
    if (easy_ratio < 0 || easy_ratio > 1) throw ConfigError("synth: easy_ratio must be in [0,1]");
    if (separation_target <= 0.5 || separation_target > 1.0)
        throw ConfigError("synth: separation_target must be in (0.5, 1]");
}

TaskBundle gen_sine_tasks(const SynthSpec& spec) {
    spec.validate();
    TaskBundle bundle;
    bundle.name = "sine";
    bundle.feature_dim = 1;
    bundle.timesteps = 0;
    bundle.info_dim = 3;
    bundle.spatial_info = false;

    for (int i = 0; i < spec.num_tasks; ++i) {
        Rng rng(Rng::derive(spec.seed, {0x51e, static_cast<std::uint64_t>(i)}));
        double amplitude = rng.uniform(0.1, 5.0);
        double phase = rng.uniform(0.0, M_PI);
        Task t;
        t.id = task_name("sine", i);
        t.kind = TaskKind::regression;
        t.feature_dim = 1;
        t.timesteps = 0;
        for (int p = 0; p < spec.points_per_task; ++p) {
            double x = rng.uniform(-5.0, 5.0);
            double eps = spec.noise_sd > 0 ? rng.normal(0.0, spec.noise_sd) : 0.0;
            t.features.push_back(x);
            t.labels.push_back(amplitude * std::sin(x + phase) + eps);
        }
        // the info encoding never touches the data stream above, so the two
        // metadata arms share identical (X, y)
        t.info.values = spec.metadata_informative
                            ? std::vector<double>{amplitude, std::sin(phase), std::cos(phase)}
                            : std::vector<double>{0.0, 0.0, 0.0};
        bundle.tasks.push_back(std::move(t));
    }
    return bundle;
}

TaskBundle gen_sphere_classification(const SynthSpec& spec) {
    spec.validate();
    TaskBundle bundle;
    bundle.name = "sphere";
    bundle.feature_dim = spec.feature_dim;
    bundle.timesteps = 0;
    bundle.info_dim = 3;
    bundle.spatial_info = spec.metadata_informative;

    Rng map_rng(Rng::derive(spec.seed, {0x5fe7e, 0}));
    std::vector<double> projection(static_cast<std::size_t>(spec.feature_dim * 3));
    for (double& v : projection) v = map_rng.normal();

    double flip_rate = 1.0 - spec.separation_target;

    for (int i = 0; i < spec.num_tasks; ++i) {
        Rng rng(Rng::derive(spec.seed, {0x5fe7e, 1, static_cast<std::uint64_t>(i)}));
        auto center = random_unit3(rng);
        std::vector<double> w = rule_from_center(projection, spec.feature_dim, center);

        int n = spec.points_per_task;
        std::vector<double> scores(static_cast<std::size_t>(n));
        Task t;
        t.id = task_name("sphere", i);
        t.kind = TaskKind::classification;
        t.feature_dim = spec.feature_dim;
        t.timesteps = 0;
        for (int p = 0; p < n; ++p) {
            double score = 0.0;
            for (int j = 0; j < spec.feature_dim; ++j) {
                double x = rng.normal();
                t.features.push_back(x);
                score += w[static_cast<std::size_t>(j)] * x;
            }
            scores[static_cast<std::size_t>(p)] = score;
        }
        // balanced labels: median-threshold the rule scores
        std::vector<double> sorted = scores;
        std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
        double threshold = sorted[static_cast<std::size_t>(n / 2)];
        for (int p = 0; p < n; ++p)
            t.labels.push_back(scores[static_cast<std::size_t>(p)] >= threshold ? 1.0 : 0.0);
        // symmetric label flips keep the balance while setting the Bayes
        // accuracy of the generating rule to separation_target; floor keeps
        // 1 - 2*flips/n >= separation_target
        int flips_per_side = static_cast<int>(std::floor(flip_rate * n / 2.0));
        if (flips_per_side > 0) {
            std::vector<int> pos, neg;
            for (int p = 0; p < n; ++p)
                (t.labels[static_cast<std::size_t>(p)] != 0.0 ? pos : neg).push_back(p);
            auto pperm = rng.permutation(pos.size());
            auto nperm = rng.permutation(neg.size());
            for (int k = 0; k < flips_per_side && k < static_cast<int>(pos.size()); ++k)
                t.labels[static_cast<std::size_t>(pos[pperm[static_cast<std::size_t>(k)]])] = 0.0;
            for (int k = 0; k < flips_per_side && k < static_cast<int>(neg.size()); ++k)
                t.labels[static_cast<std::size_t>(neg[nperm[static_cast<std::size_t>(k)]])] = 1.0;
        }
        t.bbox = point_bbox(center);
        t.info.values = spec.metadata_informative
                            ? std::vector<double>{center[0], center[1], center[2]}
                            : std::vector<double>{0.0, 0.0, 0.0};
        bundle.tasks.push_back(std::move(t));
    }
    return bundle;
}

TaskBundle gen_imbalanced_mix(const SynthSpec& spec) {
    spec.validate();
    TaskBundle bundle;
    bundle.name = "imbalanced";
    bundle.feature_dim = spec.feature_dim;
    bundle.timesteps = 0;
    bundle.info_dim = 3;
    bundle.spatial_info = spec.metadata_informative;

    Rng shared_rng(Rng::derive(spec.seed, {0x3a5ed, 0}));
    std::vector<double> easy_rule(static_cast<std::size_t>(spec.feature_dim));
    double norm = 0.0;
    for (double& v : easy_rule) {
        v = shared_rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : easy_rule) v /= norm;

    std::vector<double> projection(static_cast<std::size_t>(spec.feature_dim * 3));
    for (double& v : projection) v = shared_rng.normal();

    int n_easy = static_cast<int>(std::lround(spec.easy_ratio * spec.num_tasks));

    for (int i = 0; i < spec.num_tasks; ++i) {
        bool easy = i < n_easy;
        Rng rng(Rng::derive(spec.seed, {0x3a5ed, 1, static_cast<std::uint64_t>(i)}));
        auto center = random_unit3(rng);
        std::vector<double> w =
            easy ? easy_rule : rule_from_center(projection, spec.feature_dim, center);
        Task t = margin_task(task_name(easy ? "easy" : "hard", i), w, spec.points_per_task,
                             easy ? spec.easy_margin : spec.hard_margin, rng);
        t.bbox = point_bbox(center);
        t.tags = {easy ? "easy" : "hard"};
        t.info.values = spec.metadata_informative
                            ? std::vector<double>{center[0], center[1], center[2]}
                            : std::vector<double>{0.0, 0.0, 0.0};
        bundle.tasks.push_back(std::move(t));
    }
    return bundle;
}

TaskBundle generate_bundle(const SynthSpec& spec) {
    switch (spec.family) {
    case SynthFamily::sine_regression: return gen_sine_tasks(spec);
    case SynthFamily::sphere_classification: return gen_sphere_classification(spec);
    case SynthFamily::imbalanced_mix: return gen_imbalanced_mix(spec);
    }
    throw ConfigError("unknown synth family");
}

namespace {

std::vector<double> family_projection(const SynthSpec& spec) {
    std::vector<double> projection(static_cast<std::size_t>(spec.feature_dim * 3));
    if (spec.family == SynthFamily::sphere_classification) {
        Rng rng(Rng::derive(spec.seed, {0x5fe7e, 0}));
        for (double& v : projection) v = rng.normal();
    } else if (spec.family == SynthFamily::imbalanced_mix) {
        Rng rng(Rng::derive(spec.seed, {0x3a5ed, 0}));
        // the shared easy rule is drawn first from the same stream
        for (int i = 0; i < spec.feature_dim; ++i) rng.normal();
        for (double& v : projection) v = rng.normal();
    } else {
        throw ConfigError("smooth_rule_weights: family has no rule map");
    }
    return projection;
}

} // namespace

std::vector<double> smooth_rule_weights(const SynthSpec& spec, const std::array<double, 3>& center) {
    return rule_from_center(family_projection(spec), spec.feature_dim, center);
}

std::vector<double> shared_easy_rule(const SynthSpec& spec) {
    Rng rng(Rng::derive(spec.seed, {0x3a5ed, 0}));
    std::vector<double> w(static_cast<std::size_t>(spec.feature_dim));
    double norm = 0.0;
    for (double& v : w) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
    return w;
}

} // namespace timl
