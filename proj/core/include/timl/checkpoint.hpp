// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "timl/metatrain.hpp"

namespace timl {

/// Checkpoint directory layout:
///   manifest.json      — format version, config, model/encoder specs,
///                        tensor index (name, shape, offset), training state
///   learner.bin        — best learner parameters, little-endian float64
///   encoder.bin        — best encoder parameters (timl mode only)
///   optimizer.bin      — Adam moments and step counters
///   forgetfulness.csv  — epoch,task_id,metric,forgotten_flag
void save_checkpoint(const MetaState& state, const std::string& dir);

/// Restores a state sufficient for finetune/eval/zero-shot (best parameters
/// become both current and checkpointed; the forgetfulness log and curve are
/// not reloaded).
MetaState load_checkpoint(const std::string& dir);

} // namespace timl
