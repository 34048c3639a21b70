// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace timl {

/// Probability that a random positive outranks a random negative; ties count
/// one half (Mann-Whitney convention). Throws if either class is absent.
double auc_roc(std::span<const double> scores, std::span<const double> labels);

/// F1 with predictions thresholded at score >= 0.5; returns 0 when
/// precision + recall is 0 (the all-negative-predictions convention).
double f1_at_half(std::span<const double> scores, std::span<const double> labels);

/// Root mean squared error. County-level aggregation is the mean of
/// per-county RMSEs, which differs from the pooled RMSE in general.
double rmse(std::span<const double> preds, std::span<const double> targets);

double mse(std::span<const double> preds, std::span<const double> targets);

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0; // sample std / sqrt(n)
    std::size_t n = 0;
};
MeanStderr mean_stderr(std::span<const double> values);

} // namespace timl
