// SPDX-License-Identifier: Apache-2.0
#include "timl/encoder.hpp"

#include <cmath>

namespace timl {

namespace {

std::int64_t clamp_groups(std::int64_t requested, std::int64_t width) {
    std::int64_t g = std::min(requested, width);
    while (g > 1 && width % g != 0) --g;
    return std::max<std::int64_t>(g, 1);
}

Tensor linear_row(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), broadcast_rows(b, x.dim(0)));
}

// linear -> GeLU -> group norm -> dropout
Tensor linear_block(const Tensor& x, const ParamSet& params, const std::string& name,
                    std::int64_t norm_groups, const DropoutMasks* masks) {
    Tensor z = linear_row(x, params.at(name + ".weight"), params.at(name + ".bias"));
    Tensor a = gelu(z);
    std::int64_t width = a.dim(1);
    Tensor n = group_norm(a, clamp_groups(norm_groups, width), 1e-5,
                          params.at(name + ".gn_scale"), params.at(name + ".gn_shift"));
    if (masks != nullptr) {
        auto it = masks->by_block.find(name);
        if (it != masks->by_block.end()) n = mul(n, it->second);
    }
    return n;
}

void init_block(std::map<std::string, Tensor>& out, const std::string& name, std::int64_t in,
                std::int64_t width, Rng& rng, bool zero_weights) {
    std::vector<double> w(static_cast<std::size_t>(in * width), 0.0);
    if (!zero_weights) {
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : w) v = rng.uniform(-bound, bound);
    }
    out.emplace(name + ".weight", tensor({in, width}, std::move(w), true));
    out.emplace(name + ".bias", tensor({width}, std::vector<double>(width, 0.0), true));
    out.emplace(name + ".gn_scale", tensor({width}, std::vector<double>(width, 1.0), true));
    out.emplace(name + ".gn_shift", tensor({width}, std::vector<double>(width, 0.0), true));
}

} // namespace

const FilmPair* TaskEmbedding::find(const std::string& point) const {
    for (const FilmPair& p : pairs)
        if (p.point == point) return &p;
    return nullptr;
}

const FilmPair& TaskEmbedding::at(const std::string& point) const {
    const FilmPair* p = find(point);
    if (p == nullptr) throw ShapeError("TaskEmbedding: no pair for modulation point '" + point + "'");
    return *p;
}

Tensor film_modulate(const Tensor& h, const Tensor& scale_vec, const Tensor& shift_vec) {
    if (scale_vec.rank() != 1 || shift_vec.rank() != 1 ||
        scale_vec.dim(0) != shift_vec.dim(0))
        throw ShapeError("film_modulate: scale/shift must be equal-width vectors");
    std::int64_t width = scale_vec.dim(0);
    if (h.rank() == 1) {
        if (h.dim(0) != width) throw ShapeError("film_modulate: width mismatch");
        return add(mul(scale_vec, h), shift_vec);
    }
    if (h.rank() != 2 || h.dim(1) != width)
        throw ShapeError("film_modulate: hidden width " + shape_str(h.shape()) +
                         " does not match embedding width " + std::to_string(width));
    std::int64_t n = h.dim(0);
    return add(mul(broadcast_rows(scale_vec, n), h), broadcast_rows(shift_vec, n));
}

void EncoderSpec::validate() const {
    if (input_dim < 1) throw ConfigError("encoder: input_dim must be >= 1");
    if (trunk_width < 1 || trunk_blocks < 1) throw ConfigError("encoder: trunk must be non-empty");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0,1)");
    if (heads.empty()) throw ConfigError("encoder: at least one head required");
    for (const EncoderHead& h : heads)
        if (h.width < 1) throw ConfigError("encoder: head width must be >= 1");
}

std::vector<std::string> EncoderSpec::block_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < trunk_blocks; ++i) names.push_back("trunk" + std::to_string(i));
    for (const EncoderHead& h : heads) names.push_back("head." + h.point);
    return names;
}

std::int64_t EncoderSpec::block_output_width(const std::string& block) const {
    if (block.rfind("trunk", 0) == 0) return trunk_width;
    for (const EncoderHead& h : heads)
        if (block == "head." + h.point) return 2 * h.width;
    throw ConfigError("encoder: unknown block '" + block + "'");
}

ParamSet init_encoder_params(const EncoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(Rng::derive(seed, {rng_tag::init, 0xe5c0de}));
    std::map<std::string, Tensor> out;
    std::int64_t in = spec.input_dim;
    for (int i = 0; i < spec.trunk_blocks; ++i) {
        init_block(out, "trunk" + std::to_string(i), in, spec.trunk_width, rng, false);
        in = spec.trunk_width;
    }
    for (const EncoderHead& h : spec.heads)
        init_block(out, "head." + h.point, spec.trunk_width, 2 * h.width, rng, spec.zero_init_heads);
    return ParamSet(std::move(out));
}

DropoutMasks sample_dropout_masks(const EncoderSpec& spec, Rng& rng) {
    DropoutMasks masks;
    if (spec.dropout <= 0.0) return masks;
    double keep = 1.0 - spec.dropout;
    double inv_keep = 1.0 / keep;
    for (const std::string& name : spec.block_names()) {
        std::int64_t width = spec.block_output_width(name);
        std::vector<double> m(static_cast<std::size_t>(width));
        for (double& v : m) v = rng.uniform() < keep ? inv_keep : 0.0;
        masks.by_block.emplace(name, tensor({1, width}, std::move(m)));
    }
    return masks;
}

TaskEmbedding encode(const TaskInfo& info, const EncoderSpec& spec, const ParamSet& encoder_params,
                     const DropoutMasks* masks) {
    if (info.size() != spec.input_dim)
        throw ShapeError("encode: task info length " + std::to_string(info.size()) +
                         " does not match encoder input width " + std::to_string(spec.input_dim));
    Tensor h = tensor({1, spec.input_dim}, info.values);
    for (int i = 0; i < spec.trunk_blocks; ++i)
        h = linear_block(h, encoder_params, "trunk" + std::to_string(i), spec.norm_groups, masks);

    TaskEmbedding emb;
    for (const EncoderHead& head : spec.heads) {
        Tensor raw = linear_block(h, encoder_params, "head." + head.point, spec.norm_groups, masks);
        Tensor flat = reshape(raw, {2 * head.width});
        Tensor scale_raw = slice(flat, 0, 0, head.width);
        Tensor shift = slice(flat, 0, head.width, head.width);
        emb.pairs.push_back({head.point, offset(scale_raw, 1.0), shift});
    }
    return emb;
}

TaskEmbedding identity_embedding(const std::vector<EncoderHead>& heads) {
    TaskEmbedding emb;
    for (const EncoderHead& h : heads)
        emb.pairs.push_back({h.point, ones({h.width}), zeros({h.width})});
    return emb;
}

} // namespace timl
