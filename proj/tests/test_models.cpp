// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "timl/nn.hpp"
#include "timl/rng.hpp"

using namespace timl;

namespace {

ModelSpec mlp_spec(std::int64_t in, std::vector<std::int64_t> hidden, OutputKind out) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = in;
    s.hidden_dims = std::move(hidden);
    s.output = out;
    return s;
}

ModelSpec lstm_spec(std::int64_t channels, std::int64_t hidden, std::int64_t steps, OutputKind out) {
    ModelSpec s;
    s.kind = ModelKind::lstm;
    s.input_dim = channels;
    s.hidden_size = hidden;
    s.timesteps = steps;
    s.output = out;
    return s;
}

Tensor rand_batch(std::int64_t n, std::int64_t d, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(n * d));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return tensor({n, d}, std::move(v));
}

} // namespace

TEST_CASE("init_params determinism and layout") {
    ModelSpec spec = mlp_spec(4, {8}, OutputKind::binary_logit);
    ParamSet a = init_params(spec, 123);
    ParamSet b = init_params(spec, 123);
    for (const auto& [name, t] : a) CHECK(t.values() == b.at(name).values());
    ParamSet c = init_params(spec, 124);
    bool any_diff = false;
    for (const auto& [name, t] : a)
        if (t.values() != c.at(name).values()) any_diff = true;
    CHECK(any_diff);
    // hand count: 4*8+8 + 8*1+1
    CHECK(a.total_elements() == 49);
    // biases zero
    for (double v : a.at("layer0.bias").values()) CHECK(v == 0.0);
    for (double v : a.at("head.bias").values()) CHECK(v == 0.0);
    // weights within the fan-in bound
    for (double v : a.at("layer0.weight").values()) CHECK(std::fabs(v) <= 0.5);
}

TEST_CASE("lstm init: forget-gate bias block is 1, everything else 0") {
    ModelSpec spec = lstm_spec(2, 5, 3, OutputKind::binary_logit);
    ParamSet p = init_params(spec, 9);
    const auto& bias = p.at("lstm.bias").values();
    for (std::int64_t j = 0; j < 20; ++j) {
        if (j >= 5 && j < 10)
            CHECK(bias[static_cast<std::size_t>(j)] == 1.0);
        else
            CHECK(bias[static_cast<std::size_t>(j)] == 0.0);
    }
    for (double v : p.at("head.bias").values()) CHECK(v == 0.0);
}

TEST_CASE("bare linear map: weight 2, bias 0, x=3 gives 6") {
    ModelSpec spec = mlp_spec(1, {}, OutputKind::scalar_regression);
    ParamSet p = init_params(spec, 1);
    p.set("head.weight", tensor({1, 1}, {2.0}, true));
    Tensor out = forward(spec, p, tensor({1, 1}, {3.0}));
    CHECK(out[0] == 6.0);
    CHECK_THROWS_AS(spec.encoder_heads(), ConfigError); // nothing to modulate
}

TEST_CASE("FiLM identity: (1,0) embedding equals no embedding bit-exactly") {
    Rng rng(50);
    ModelSpec spec = mlp_spec(3, {8, 4}, OutputKind::binary_logit);
    ParamSet p = init_params(spec, 77);
    Tensor x = rand_batch(6, 3, rng);
    TaskEmbedding idn = identity_embedding(spec.encoder_heads());
    Tensor plain = forward(spec, p, x);
    Tensor modded = forward(spec, p, x, &idn);
    CHECK(plain.values() == modded.values());

    ModelSpec lspec = lstm_spec(2, 6, 4, OutputKind::scalar_regression);
    ParamSet lp = init_params(lspec, 78);
    Tensor lx = rand_batch(5, 8, rng);
    TaskEmbedding lidn = identity_embedding(lspec.encoder_heads());
    CHECK(forward(lspec, lp, lx).values() == forward(lspec, lp, lx, &lidn).values());
}

TEST_CASE("modulation changes the output and gradients flow to scale/shift") {
    Rng rng(51);
    ModelSpec spec = mlp_spec(3, {8}, OutputKind::scalar_regression);
    ParamSet p = init_params(spec, 3);
    Tensor x = rand_batch(4, 3, rng);
    Tensor y = rand_batch(4, 1, rng);
    Tensor sv = tensor({8}, std::vector<double>(8, 1.1), true);
    Tensor bv = tensor({8}, std::vector<double>(8, -0.2), true);
    TaskEmbedding emb;
    emb.pairs.push_back({"hidden0", sv, bv});
    Tensor out = forward(spec, p, x, &emb);
    Tensor loss = squared_error(out, reshape(y, {4}));
    Tensor wrt[] = {sv, bv};
    auto gs = grad(loss, std::span<const Tensor>(wrt, 2));
    for (const Tensor& g : gs) {
        double mag = 0;
        for (double v : g.values()) mag += std::fabs(v);
        CHECK(mag > 1e-12);
    }
    CHECK(out.values() != forward(spec, p, x).values());
}

TEST_CASE("embedding width mismatch is an error") {
    ModelSpec spec = mlp_spec(3, {8}, OutputKind::binary_logit);
    ParamSet p = init_params(spec, 5);
    TaskEmbedding emb;
    emb.pairs.push_back({"hidden0", ones({7}), zeros({7})});
    Rng rng(1);
    Tensor x = rand_batch(2, 3, rng);
    CHECK_THROWS_AS(forward(spec, p, x, &emb), ShapeError);
}

TEST_CASE("lstm with zero recurrent weights matches the hand-unrolled oracle") {
    // T=3 constant inputs; with W_hh = 0 the gates depend only on the input
    // transform: c3 = i*g*(1 + f + f^2), h3 = o*tanh(c3).
    const std::int64_t C = 2, H = 3, T = 3;
    ModelSpec spec = lstm_spec(C, H, T, OutputKind::scalar_regression);
    ParamSet p = init_params(spec, 17);
    p.set("lstm.weight_hidden", zeros({H, 4 * H}));

    std::vector<double> xrow = {0.4, -0.9};
    std::vector<double> batch_row;
    for (int t = 0; t < T; ++t) batch_row.insert(batch_row.end(), xrow.begin(), xrow.end());
    Tensor x = tensor({1, C * T}, batch_row);
    double got = forward(spec, p, x)[0];

    const auto& wx = p.at("lstm.weight_input").values(); // [C, 4H]
    const auto& bias = p.at("lstm.bias").values();
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h3(static_cast<std::size_t>(H));
    for (std::int64_t j = 0; j < H; ++j) {
        auto gate = [&](std::int64_t block) {
            double a = bias[static_cast<std::size_t>(block * H + j)];
            for (std::int64_t k = 0; k < C; ++k)
                a += xrow[static_cast<std::size_t>(k)] * wx[static_cast<std::size_t>(k * 4 * H + block * H + j)];
            return a;
        };
        double i = sig(gate(0)), f = sig(gate(1)), g = std::tanh(gate(2)), o = sig(gate(3));
        double c3 = i * g * (1.0 + f + f * f);
        h3[static_cast<std::size_t>(j)] = o * std::tanh(c3);
    }
    const auto& hw = p.at("head.weight").values();
    double expected = p.at("head.bias")[0];
    for (std::int64_t j = 0; j < H; ++j) expected += h3[static_cast<std::size_t>(j)] * hw[static_cast<std::size_t>(j)];
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lstm output is invariant to batch order") {
    Rng rng(8);
    ModelSpec spec = lstm_spec(2, 4, 5, OutputKind::binary_logit);
    ParamSet p = init_params(spec, 31);
    Tensor x = rand_batch(6, 10, rng);
    Tensor out = forward(spec, p, x);
    // reverse the rows
    std::vector<double> rev(x.values().size());
    for (int i = 0; i < 6; ++i)
        std::copy_n(x.values().begin() + i * 10, 10, rev.begin() + (5 - i) * 10);
    Tensor out_rev = forward(spec, p, tensor({6, 10}, std::move(rev)));
    for (int i = 0; i < 6; ++i) CHECK(out[i] == out_rev[5 - i]);
}

TEST_CASE("forward_with_hidden exposes the pre-head features") {
    Rng rng(4);
    ModelSpec spec = mlp_spec(3, {5}, OutputKind::scalar_regression);
    ParamSet p = init_params(spec, 2);
    Tensor x = rand_batch(2, 3, rng);
    ForwardResult r = forward_with_hidden(spec, p, x);
    CHECK(r.hidden.shape() == Shape{2, 5});
    CHECK(r.output.shape() == Shape{2});
    // head applied to hidden reproduces the output
    Tensor manual = add(matmul(r.hidden, p.at("head.weight")), broadcast_rows(p.at("head.bias"), 2));
    CHECK(reshape(manual, {2}).values() == r.output.values());
}

TEST_CASE("task_loss dispatches on output kind") {
    ModelSpec reg = mlp_spec(1, {2}, OutputKind::scalar_regression);
    ModelSpec cls = mlp_spec(1, {2}, OutputKind::binary_logit);
    Tensor pred = tensor({2}, {0.5, -0.5});
    Tensor target = tensor({2}, {1.0, 0.0});
    CHECK(task_loss(reg, pred, target).item() == doctest::Approx(0.25));
    double bce = task_loss(cls, pred, target).item();
    double manual = (-std::log(1 / (1 + std::exp(-0.5))) - std::log(1 - 1 / (1 + std::exp(0.5)))) / 2;
    CHECK(bce == doctest::Approx(manual));
}

TEST_CASE("model input shape errors") {
    ModelSpec spec = lstm_spec(2, 3, 4, OutputKind::binary_logit);
    ParamSet p = init_params(spec, 1);
    CHECK_THROWS_AS(forward(spec, p, tensor({1, 7}, std::vector<double>(7, 0.0))), ShapeError);
    ModelSpec bad = lstm_spec(2, 0, 4, OutputKind::binary_logit);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
