// SPDX-License-Identifier: Apache-2.0
#include "timl/nn.hpp"

#include <cmath>

#include "timl/rng.hpp"

namespace timl {

namespace {

Tensor linear_row(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), broadcast_rows(b, x.dim(0)));
}

Tensor maybe_film(const Tensor& h, const TaskEmbedding* emb, const std::string& point) {
    if (emb == nullptr) return h;
    const FilmPair& p = emb->at(point);
    if (p.scale_vec.dim(0) != h.dim(1))
        throw ShapeError("forward: embedding width " + std::to_string(p.scale_vec.dim(0)) +
                         " does not match modulation point '" + point + "' width " +
                         std::to_string(h.dim(1)));
    return film_modulate(h, p.scale_vec, p.shift_vec);
}

Tensor uniform_weight(Shape shape, std::int64_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(numel(shape)));
    for (double& v : w) v = rng.uniform(-bound, bound);
    return tensor(std::move(shape), std::move(w), true);
}

Tensor zero_bias(std::int64_t width) {
    return tensor({width}, std::vector<double>(static_cast<std::size_t>(width), 0.0), true);
}

} // namespace

void ModelSpec::validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (kind == ModelKind::mlp) {
        // an empty hidden list is a bare linear map; it has no modulation
        // points and can only run unmodulated
        for (std::int64_t h : hidden_dims)
            if (h < 1) throw ConfigError("model: hidden width must be >= 1");
    } else {
        if (hidden_size < 1) throw ConfigError("model: lstm hidden_size must be >= 1");
        if (timesteps < 1) throw ConfigError("model: lstm timesteps must be >= 1");
    }
}

std::vector<ModulationPoint> ModelSpec::modulation_points() const {
    std::vector<ModulationPoint> pts;
    if (kind == ModelKind::mlp) {
        for (std::size_t i = 0; i < hidden_dims.size(); ++i)
            pts.push_back({"hidden" + std::to_string(i), hidden_dims[i]});
    } else {
        pts.push_back({"hidden", hidden_size});
    }
    return pts;
}

std::vector<EncoderHead> ModelSpec::encoder_heads() const {
    std::vector<ModulationPoint> pts = modulation_points();
    if (pts.empty())
        throw ConfigError("model: at least one modulation point is required to attach an encoder");
    std::vector<EncoderHead> heads;
    for (const ModulationPoint& p : pts) heads.push_back({p.name, p.width});
    return heads;
}

std::int64_t ModelSpec::row_width() const {
    return kind == ModelKind::lstm ? input_dim * timesteps : input_dim;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(Rng::derive(seed, {rng_tag::init, 0x1ea54e5}));
    std::map<std::string, Tensor> out;
    if (spec.kind == ModelKind::mlp) {
        std::int64_t in = spec.input_dim;
        for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
            std::int64_t width = spec.hidden_dims[i];
            out.emplace("layer" + std::to_string(i) + ".weight", uniform_weight({in, width}, in, rng));
            out.emplace("layer" + std::to_string(i) + ".bias", zero_bias(width));
            in = width;
        }
        out.emplace("head.weight", uniform_weight({in, 1}, in, rng));
        out.emplace("head.bias", zero_bias(1));
    } else {
        std::int64_t c = spec.input_dim, hdim = spec.hidden_size;
        out.emplace("lstm.weight_input", uniform_weight({c, 4 * hdim}, c, rng));
        out.emplace("lstm.weight_hidden", uniform_weight({hdim, 4 * hdim}, hdim, rng));
        // gate order i,f,g,o; forget-gate bias block starts at hdim
        std::vector<double> bias(static_cast<std::size_t>(4 * hdim), 0.0);
        for (std::int64_t j = 0; j < hdim; ++j) bias[static_cast<std::size_t>(hdim + j)] = 1.0;
        out.emplace("lstm.bias", tensor({4 * hdim}, std::move(bias), true));
        out.emplace("head.weight", uniform_weight({hdim, 1}, hdim, rng));
        out.emplace("head.bias", zero_bias(1));
    }
    return ParamSet(std::move(out));
}

ForwardResult forward_with_hidden(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                                  const TaskEmbedding* embedding) {
    if (x.rank() != 2 || x.dim(1) != spec.row_width())
        throw ShapeError("forward: input shape " + shape_str(x.shape()) + " does not match row width " +
                         std::to_string(spec.row_width()));
    std::int64_t n = x.dim(0);
    Tensor h;
    if (spec.kind == ModelKind::mlp) {
        h = x;
        for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
            std::string layer = "layer" + std::to_string(i);
            Tensor z = linear_row(h, params.at(layer + ".weight"), params.at(layer + ".bias"));
            z = maybe_film(z, embedding, "hidden" + std::to_string(i));
            h = gelu(z);
        }
    } else {
        std::int64_t c = spec.input_dim, hdim = spec.hidden_size;
        const Tensor& wx = params.at("lstm.weight_input");
        const Tensor& wh = params.at("lstm.weight_hidden");
        Tensor bias_rows = broadcast_rows(params.at("lstm.bias"), n);
        Tensor hs = zeros({n, hdim});
        Tensor cs = zeros({n, hdim});
        for (std::int64_t t = 0; t < spec.timesteps; ++t) {
            Tensor xt = slice(x, 1, t * c, c);
            Tensor gates = add(add(matmul(xt, wx), matmul(hs, wh)), bias_rows);
            Tensor in_gate = sigmoid(slice(gates, 1, 0, hdim));
            Tensor forget_gate = sigmoid(slice(gates, 1, hdim, hdim));
            Tensor cell_in = tanh(slice(gates, 1, 2 * hdim, hdim));
            Tensor out_gate = sigmoid(slice(gates, 1, 3 * hdim, hdim));
            cs = add(mul(forget_gate, cs), mul(in_gate, cell_in));
            hs = mul(out_gate, tanh(cs));
        }
        h = maybe_film(hs, embedding, "hidden");
    }
    Tensor out = linear_row(h, params.at("head.weight"), params.at("head.bias"));
    return {reshape(out, {n}), h};
}

Tensor forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
               const TaskEmbedding* embedding) {
    return forward_with_hidden(spec, params, x, embedding).output;
}

Tensor task_loss(const ModelSpec& spec, const Tensor& predictions, const Tensor& targets) {
    return spec.output == OutputKind::binary_logit ? bce_with_logits(predictions, targets)
                                                   : squared_error(predictions, targets);
}

} // namespace timl
