// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "timl/autodiff.hpp"
#include "timl/encoder.hpp"

namespace timl {

enum class ModelKind { mlp, lstm };
enum class OutputKind { binary_logit, scalar_regression };

struct ModulationPoint {
    std::string name;
    std::int64_t width = 0;
};

/// Learner architecture description. The lstm kind is a single recurrent
/// layer followed by a linear head; the mlp kind uses GeLU hidden layers.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::int64_t input_dim = 1;
    std::vector<std::int64_t> hidden_dims; // mlp
    std::int64_t hidden_size = 0;          // lstm
    std::int64_t timesteps = 0;            // lstm
    OutputKind output = OutputKind::scalar_regression;

    void validate() const;
    /// MLP: one point after every hidden linear layer (pre-activation).
    /// LSTM: one point on the final hidden state before the head.
    std::vector<ModulationPoint> modulation_points() const;
    std::vector<EncoderHead> encoder_heads() const;
    /// Columns expected in an input batch row.
    std::int64_t row_width() const;
};

/// Weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero except
/// the LSTM forget gate block, initialized to 1.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Batch forward pass. x is [n, row_width()]; returns logits or scalar
/// predictions of shape [n]. When an embedding is given, each modulation
/// point's vector is FiLM-transformed before the next layer; when absent the
/// pass is the plain unmodulated model.
Tensor forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
               const TaskEmbedding* embedding = nullptr);

struct ForwardResult {
    Tensor output; // [n]
    Tensor hidden; // [n, final hidden width], post-modulation features before the head
};

ForwardResult forward_with_hidden(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                                  const TaskEmbedding* embedding = nullptr);

/// Task loss for the model's output kind: BCE-with-logits or mean squared error.
Tensor task_loss(const ModelSpec& spec, const Tensor& predictions, const Tensor& targets);

} // namespace timl
