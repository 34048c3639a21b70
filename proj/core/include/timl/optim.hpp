// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "timl/autodiff.hpp"

namespace timl {

/// lr(0) = initial, lr(total_epochs - 1) = min_lr, monotone cosine decay on
/// the single half-period in between.
double cosine_annealed_lr(double initial, double min_lr, int epoch, int total_epochs);

/// Scales every gradient in `grad_sets` by max_norm/norm when the joint
/// global L2 norm exceeds max_norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<ParamSet*> grad_sets, double max_norm);

/// Adam with bias correction. Moment buffers live outside the tape.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8);

    /// One update; `params` values are replaced with detached leaf tensors.
    void step(ParamSet& params, const ParamSet& grads, double lr);

    std::int64_t steps_taken() const { return t_; }
    /// Flattened state for checkpointing: first-moment then second-moment
    /// buffers in name order, then the step counter.
    std::vector<double> serialize() const;
    void restore(const std::vector<double>& data);

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

} // namespace timl
