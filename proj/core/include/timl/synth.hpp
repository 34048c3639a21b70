// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "timl/tasks.hpp"

namespace timl {

enum class SynthFamily { sine_regression, sphere_classification, imbalanced_mix };

const char* synth_family_name(SynthFamily f);
SynthFamily synth_family_from_name(const std::string& name);

/// Synthetic task-distribution generators. Pure functions of their inputs
/// (seed included); the informative and uninformative metadata arms differ
/// only in TaskInfo contents, with identical (X, y) data.
struct SynthSpec {
    SynthFamily family = SynthFamily::sine_regression;
    int num_tasks = 100;
    int points_per_task = 64;
    bool metadata_informative = true;
    double noise_sd = 0.01;
    std::uint64_t seed = 0;

    // sphere_classification / imbalanced_mix
    int feature_dim = 8;
    double separation_target = 0.95; // Bayes accuracy of the generating rule

    // imbalanced_mix
    double easy_ratio = 0.9;
    double easy_margin = 1.0;
    double hard_margin = 0.05;

    void validate() const;
};

/// y = A sin(x + phase) + noise, x ~ U(-5,5); A in [0.1, 5], phase in [0, pi].
/// Informative TaskInfo is [A, sin(phase), cos(phase)], else zeros.
TaskBundle gen_sine_tasks(const SynthSpec& spec);

/// Task centers on the unit sphere; each task's labels follow a linear rule
/// whose weights vary smoothly with the center. TaskInfo is the center's
/// Cartesian triple; labels are balanced per task.
TaskBundle gen_sphere_classification(const SynthSpec& spec);

/// easy_ratio of tasks share one large-margin rule; the rest get small-margin
/// task-specific rules. Tasks are tagged "easy" / "hard".
TaskBundle gen_imbalanced_mix(const SynthSpec& spec);

TaskBundle generate_bundle(const SynthSpec& spec);

/// The label-generating linear rule attached to a task center (sphere tasks,
/// and the task-specific "hard" rules of the imbalanced mix). Exposed so the
/// generated labels can be validated against the rule directly.
std::vector<double> smooth_rule_weights(const SynthSpec& spec, const std::array<double, 3>& center);
/// The single large-margin rule shared by every "easy" task of the mix.
std::vector<double> shared_easy_rule(const SynthSpec& spec);

} // namespace timl
