// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "timl/errors.hpp"

namespace timl {

/// Kernel hyperparameters for the residual Gaussian process over
/// (location, year), with a linear mean in the learner's hidden features.
struct GPConfig {
    double signal_var = 1.0;  // sigma^2
    double loc_scale = 0.5;   // r_l
    double year_scale = 1.5;  // r_y
    double noise_var = 0.01;  // sigma_e^2
    double jitter_start = 1e-10;
    double jitter_max = 1e-6;

    void validate() const;
};

/// sigma^2 exp(-||dloc||^2/(2 r_l) - dyear^2/(2 r_y)), plus sigma_e^2 when the
/// two points coincide exactly in location and year.
double gp_kernel(const std::array<double, 2>& loc_a, double year_a,
                 const std::array<double, 2>& loc_b, double year_b, const GPConfig& cfg);

/// Rows of (location, year, hidden feature vector) and, for training data,
/// the targets.
struct GPData {
    std::vector<std::array<double, 2>> locations;
    std::vector<double> years;
    std::int64_t hidden_dim = 0;
    std::vector<double> hidden; // row-major [n, hidden_dim]
    std::vector<double> targets;

    std::int64_t rows() const { return static_cast<std::int64_t>(years.size()); }
    void validate(bool with_targets) const;
};

/// Fitted solve factors: Cholesky of K + sigma_e^2 I (with escalating jitter),
/// GLS mean coefficients and the residual weights (K + sigma_e^2 I)^-1 (y - H beta).
class GPFit {
public:
    static GPFit fit(GPData train, const GPConfig& cfg);

    /// h(x*)' beta + k*' (K + sigma_e^2 I)^-1 (y - H beta) per test row.
    std::vector<double> predict(const GPData& test) const;

    const std::vector<double>& mean_coefficients() const { return mean_coef_; }
    const std::vector<double>& residual_weights() const { return residual_weights_; }
    double jitter_used() const { return jitter_used_; }

private:
    GPConfig cfg_;
    GPData train_;
    std::vector<double> mean_coef_;
    std::vector<double> residual_weights_;
    double jitter_used_ = 0;
};

std::vector<double> gp_fit_predict(const GPData& train, const GPData& test, const GPConfig& cfg);

} // namespace timl
