// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "timl/autodiff.hpp"
#include "timl/rng.hpp"
#include "timl/tensor.hpp"

namespace timl {

/// Per-task metadata vector, constant for every datapoint of the task.
struct TaskInfo {
    std::vector<double> values;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    Tensor as_tensor() const { return tensor({size()}, values); }
};

/// One modulated point: an elementwise scale and shift of a hidden vector.
struct FilmPair {
    std::string point;
    Tensor scale_vec; // gamma
    Tensor shift_vec; // beta
};

/// Per-layer (scale, shift) pairs emitted by the task encoder. Held fixed for
/// all support/query batches of a task during inner-loop adaptation.
struct TaskEmbedding {
    std::vector<FilmPair> pairs;

    const FilmPair* find(const std::string& point) const;
    const FilmPair& at(const std::string& point) const;
};

/// h_out = scale (.) h + shift, elementwise; h may be [n,w] or [w],
/// scale/shift are [w]. Differentiable with respect to all three inputs.
Tensor film_modulate(const Tensor& h, const Tensor& scale_vec, const Tensor& shift_vec);

struct EncoderHead {
    std::string point;
    std::int64_t width = 0;
};

/// Task encoder architecture: a shared trunk of linear blocks
/// (linear -> GeLU -> group norm -> dropout) producing a hidden task vector,
/// then one independent block per modulation point emitting that point's raw
/// (scale, shift); scale is parameterized as 1 + raw so zero-initialized
/// heads yield identity modulation.
struct EncoderSpec {
    std::int64_t input_dim = 0;
    std::int64_t trunk_width = 64;
    int trunk_blocks = 2;
    std::int64_t norm_groups = 4; // clamped down to the largest divisor of a block's width
    double dropout = 0.1;
    bool zero_init_heads = true;
    std::vector<EncoderHead> heads;

    void validate() const;
    std::vector<std::string> block_names() const;
    std::int64_t block_output_width(const std::string& block) const;
};

ParamSet init_encoder_params(const EncoderSpec& spec, std::uint64_t seed);

/// Dropout masks keyed by block name, sampled outside the tape so a fixed
/// mask can be replayed (finite-difference checks, determinism).
/// Entries are 0 or 1/(1-p).
struct DropoutMasks {
    std::map<std::string, Tensor> by_block;
};

DropoutMasks sample_dropout_masks(const EncoderSpec& spec, Rng& rng);

/// Maps a task-information vector to the per-point FiLM pairs.
/// Pure function of (info, params, masks); training happens in the outer loop only.
TaskEmbedding encode(const TaskInfo& info, const EncoderSpec& spec, const ParamSet& encoder_params,
                     const DropoutMasks* masks = nullptr);

/// scale=1, shift=0 at every head: forward passes become bit-identical to an
/// unmodulated model.
TaskEmbedding identity_embedding(const std::vector<EncoderHead>& heads);

} // namespace timl
