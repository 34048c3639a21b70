// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <numeric>

#include "timl/gp.hpp"
#include "timl/metatrain.hpp"
#include "timl/metrics.hpp"
#include "timl/synth.hpp"

using namespace timl;

namespace {

TaskBundle sine_bundle(int n) {
    SynthSpec spec;
    spec.family = SynthFamily::sine_regression;
    spec.num_tasks = n;
    spec.points_per_task = 40;
    spec.seed = 7;
    return gen_sine_tasks(spec);
}

ModelSpec bench_model() {
    ModelSpec m;
    m.kind = ModelKind::mlp;
    m.input_dim = 1;
    m.hidden_dims = {32, 32};
    m.output = OutputKind::scalar_regression;
    return m;
}

MetaConfig bench_config(TrainerMode mode, bool first_order) {
    MetaConfig cfg;
    cfg.mode = mode;
    cfg.inner_lr = 0.01;
    cfg.outer_lr = 1e-3;
    cfg.outer_lr_min = 1e-4;
    cfg.epochs = 4;
    cfg.meta_batch_size = 8;
    cfg.first_order = first_order;
    cfg.encoder_dropout = 0.0;
    return cfg;
}

void BM_InnerAdapt(benchmark::State& state) {
    TaskBundle bundle = sine_bundle(1);
    ModelSpec model = bench_model();
    ParamSet params = init_params(model, 3);
    Batch support = sample_uniform_batch(bundle.tasks[0], 10, 5);
    bool second_order = state.range(0) != 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            inner_adapt(model, params, nullptr, support, 0.01, 1, !second_order));
    }
}
BENCHMARK(BM_InnerAdapt)->Arg(0)->Arg(1);

void BM_OuterStep(benchmark::State& state) {
    TaskBundle bundle = sine_bundle(8);
    ModelSpec model = bench_model();
    bool second_order = state.range(0) != 0;
    MetaState st = init_meta_state(bench_config(TrainerMode::timl, !second_order), model,
                                   TaskKind::regression);
    st.encoder->input_dim = 3;
    st.encoder_params = init_encoder_params(*st.encoder, 5);
    st.adam_encoder = AdamState(st.encoder_params);
    std::vector<const Task*> batch;
    for (const Task& t : bundle.tasks) batch.push_back(&t);
    for (auto _ : state) {
        benchmark::DoNotOptimize(outer_step(st, batch));
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_OuterStep)->Arg(0)->Arg(1);

void BM_Encode(benchmark::State& state) {
    EncoderSpec spec;
    spec.input_dim = 13;
    spec.heads = {{"hidden0", 32}, {"hidden1", 32}};
    spec.dropout = 0;
    ParamSet params = init_encoder_params(spec, 1);
    TaskInfo info{std::vector<double>(13, 0.1)};
    for (auto _ : state) benchmark::DoNotOptimize(encode(info, spec, params));
}
BENCHMARK(BM_Encode);

void BM_GpFitPredict(benchmark::State& state) {
    Rng rng(11);
    auto n = state.range(0);
    GPData train, test;
    train.hidden_dim = test.hidden_dim = 4;
    for (std::int64_t i = 0; i < n; ++i) {
        train.locations.push_back({rng.uniform(35, 48), rng.uniform(-105, -80)});
        train.years.push_back(2009 + static_cast<double>(rng.below(7)));
        for (int c = 0; c < 4; ++c) train.hidden.push_back(rng.normal());
        train.targets.push_back(rng.uniform(20, 60));
    }
    for (int i = 0; i < 32; ++i) {
        test.locations.push_back({rng.uniform(35, 48), rng.uniform(-105, -80)});
        test.years.push_back(2012);
        for (int c = 0; c < 4; ++c) test.hidden.push_back(rng.normal());
    }
    for (auto _ : state) benchmark::DoNotOptimize(gp_fit_predict(train, test, GPConfig{}));
}
BENCHMARK(BM_GpFitPredict)->Arg(32)->Arg(128)->Arg(512);

void BM_AucRoc(benchmark::State& state) {
    Rng rng(13);
    auto n = state.range(0);
    std::vector<double> scores(static_cast<std::size_t>(n)), labels(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        scores[static_cast<std::size_t>(i)] = rng.uniform();
        labels[static_cast<std::size_t>(i)] = i % 2;
    }
    for (auto _ : state) benchmark::DoNotOptimize(auc_roc(scores, labels));
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AucRoc)->Arg(1000)->Arg(100000);

} // namespace
