// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier criteria train on synthetic task distributions at desk
// scale; every tolerance is pinned in code.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "timl/forget.hpp"
#include "timl/gp.hpp"
#include "timl/harness.hpp"
#include "timl/metatrain.hpp"
#include "timl/metrics.hpp"
#include "timl/rng.hpp"
#include "timl/synth.hpp"
#include "timl/tasks.hpp"

using namespace timl;

namespace {

int g_failures = 0;

void report(int criterion, const char* title, bool pass, double seconds, const std::string& detail) {
    std::printf("[%s] criterion %d: %-34s (%6.1f s)  %s\n", pass ? "PASS" : "FAIL", criterion,
                title, seconds, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double elapsed(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)));
    for (double& v : d) v = rng.uniform(lo, hi);
    return tensor(std::move(shape), std::move(d));
}

// ---------------------------------------------------------------- criterion 1

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst_first = 0;
    std::string detail;

    // every primitive, through a scalar functional
    {
        ParamSet p(std::map<std::string, Tensor>{{"x", rand_tensor({6}, rng)}});
        for (auto fn : {&sigmoid, &tanh, &gelu, &softplus}) {
            auto f = [fn](const ParamSet& q) { return sum(fn(q.at("x"))); };
            worst_first = std::max(worst_first, finite_diff_check(f, p, 1e-5));
        }
        auto f_rsqrt = [](const ParamSet& q) { return sum(rsqrt(offset(mul(q.at("x"), q.at("x")), 1.0))); };
        worst_first = std::max(worst_first, finite_diff_check(f_rsqrt, p, 1e-5));
    }
    {
        ParamSet p(std::map<std::string, Tensor>{{"a", rand_tensor({3, 4}, rng)},
                                                 {"b", rand_tensor({4, 3}, rng)}});
        auto f = [](const ParamSet& q) { return mean(matmul(q.at("a"), q.at("b"))); };
        worst_first = std::max(worst_first, finite_diff_check(f, p, 1e-5));
        auto g = [](const ParamSet& q) {
            Tensor c = concat(q.at("a"), transpose(q.at("b")), 1);
            return sum(mul(slice(c, 1, 1, 3), slice(c, 1, 3, 3)));
        };
        worst_first = std::max(worst_first, finite_diff_check(g, p, 1e-5));
    }
    {
        ParamSet p(std::map<std::string, Tensor>{{"x", rand_tensor({3, 8}, rng)},
                                                 {"s", rand_tensor({8}, rng, 0.5, 1.5)},
                                                 {"t", rand_tensor({8}, rng)}});
        auto f = [](const ParamSet& q) {
            return mean(group_norm(q.at("x"), 4, 1e-5, q.at("s"), q.at("t")));
        };
        worst_first = std::max(worst_first, finite_diff_check(f, p, 1e-5));
        auto g = [](const ParamSet& q) {
            Tensor d = sub(sum_rows(q.at("x")), q.at("s"));
            return squared_error(d, q.at("t"));
        };
        worst_first = std::max(worst_first, finite_diff_check(g, p, 1e-5));
    }
    // 2-layer MLP + BCE
    {
        ParamSet p(std::map<std::string, Tensor>{{"w1", rand_tensor({4, 16}, rng)},
                                                 {"b1", rand_tensor({16}, rng)},
                                                 {"w2", rand_tensor({16, 1}, rng)}});
        Tensor x = rand_tensor({12, 4}, rng);
        Tensor y = tensor({12}, {1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1});
        auto f = [x, y](const ParamSet& q) {
            Tensor h = gelu(add(matmul(x, q.at("w1")), broadcast_rows(q.at("b1"), 12)));
            return bce_with_logits(reshape(matmul(h, q.at("w2")), {12}), y);
        };
        worst_first = std::max(worst_first, finite_diff_check(f, p, 1e-5));
    }
    bool pass_first = worst_first < 1e-5;

    // one-inner-step meta-gradient on a tiny MLP
    double meta_err;
    {
        ParamSet p(std::map<std::string, Tensor>{{"w1", rand_tensor({2, 8}, rng)},
                                                 {"w2", rand_tensor({8, 1}, rng)}});
        Tensor xs = rand_tensor({6, 2}, rng), ys = rand_tensor({6}, rng);
        Tensor xq = rand_tensor({6, 2}, rng), yq = rand_tensor({6}, rng);
        auto model = [](const ParamSet& w, const Tensor& x) {
            return reshape(matmul(gelu(matmul(x, w.at("w1"))), w.at("w2")), {6});
        };
        auto f = [&](const ParamSet& q) {
            Tensor inner = squared_error(model(q, xs), ys);
            ParamSet gs = grad(inner, q, {.create_graph = true, .allow_unused = true});
            ParamSet adapted = q;
            for (const auto& [name, t] : q) adapted.set(name, sub(t, scale(gs.at(name), 0.05)));
            return squared_error(model(adapted, xq), yq);
        };
        meta_err = finite_diff_check(f, p, 1e-4);
    }
    bool pass_meta = meta_err < 1e-4;

    // hand-derived scalar meta-gradient
    Tensor theta = tensor({}, {1.0}, true);
    auto g1 = grad(mul(theta, theta), std::span<const Tensor>(&theta, 1), {.create_graph = true});
    Tensor adapted = sub(theta, scale(g1[0], 0.1));
    auto meta = grad(mul(adapted, adapted), std::span<const Tensor>(&theta, 1));
    double scalar_err = std::fabs(meta[0].item() - 1.28);
    bool pass_scalar = scalar_err <= 1e-10;

    char buf[160];
    std::snprintf(buf, sizeof(buf), "primitives %.2e, meta %.2e, scalar |d|=%.1e", worst_first,
                  meta_err, scalar_err);
    report(1, "autodiff correctness", pass_first && pass_meta && pass_scalar, elapsed(t0), buf);
}

// ---------------------------------------------------------------- criterion 2

void criterion_2() {
    auto t0 = std::chrono::steady_clock::now();
    SynthSpec sine;
    sine.family = SynthFamily::sine_regression;
    sine.num_tasks = 18;
    sine.points_per_task = 24;
    sine.noise_sd = 0.01;
    sine.seed = 77;
    TaskBundle bundle = gen_sine_tasks(sine);

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.input_dim = 1;
    model.hidden_dims = {16, 16};
    model.output = OutputKind::scalar_regression;

    MetaConfig cfg;
    cfg.mode = TrainerMode::maml;
    cfg.inner_lr = 0.01;
    cfg.inner_steps = 1;
    cfg.outer_lr = 1e-3;
    cfg.outer_lr_min = 1e-4;
    cfg.epochs = 7; // 16 train tasks / batch 2 = 8 outer steps per epoch -> 56 steps
    cfg.meta_batch_size = 2;
    cfg.seed = 1;
    cfg.encoder_trunk_width = 16;
    cfg.encoder_dropout = 0.1;

    MetaState m = meta_train(cfg, model, bundle);

    MetaConfig timl_cfg = cfg;
    timl_cfg.mode = TrainerMode::timl;
    timl_cfg.freeze_encoder = true;
    timl_cfg.encoder_zero_init_heads = true;
    MetaState t = meta_train(timl_cfg, model, bundle);

    int outer_steps = 0;
    for (const EpochLogRow& row : m.curve) outer_steps += 8 - row.skipped_steps;

    bool identical = true;
    for (const auto& [name, tens] : m.learner)
        if (tens.values() != t.learner.at(name).values()) identical = false;
    for (std::size_t i = 0; i < m.curve.size(); ++i) {
        if (m.curve[i].val_metric != t.curve[i].val_metric) identical = false;
        if (m.curve[i].train_metric != t.curve[i].train_metric) identical = false;
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%d outer steps, bit-identical=%s", outer_steps,
                  identical ? "yes" : "no");
    report(2, "maml reduction (identity film)", identical && outer_steps >= 50, elapsed(t0), buf);
}

// ---------------------------------------------------------------- criterion 3

struct SineArm {
    std::vector<double> timl; // per-seed mean query MSE over held-out tasks
    std::vector<double> maml;
};

MetaConfig sine_meta_config(TrainerMode mode, std::uint64_t seed) {
    MetaConfig cfg;
    cfg.mode = mode;
    cfg.inner_lr = 0.01;
    cfg.inner_steps = 1;
    cfg.outer_lr = 2e-3;
    cfg.outer_lr_min = 1e-4;
    cfg.epochs = 120;
    cfg.meta_batch_size = 8;
    cfg.seed = seed;
    cfg.batch_regression = 10;
    cfg.encoder_dropout = 0.0;
    // first-order for both arms: the comparison isolates the task-information
    // channel, which is a direct dependence; second-order terms would let the
    // constant modulation act as a learned inner-step preconditioner and
    // confound the uninformative arm
    cfg.first_order = true;
    cfg.threads = 2;
    return cfg;
}

SineArm run_sine_arm(bool informative, const std::vector<std::uint64_t>& seeds) {
    SynthSpec sine;
    sine.family = SynthFamily::sine_regression;
    sine.num_tasks = 240;
    sine.points_per_task = 40;
    sine.noise_sd = 0.01;
    sine.seed = 1234;
    sine.metadata_informative = informative;
    TaskBundle bundle = gen_sine_tasks(sine);

    TaskBundle train;
    train.feature_dim = 1;
    train.info_dim = 3;
    std::vector<const Task*> eval_tasks;
    for (std::size_t i = 0; i < bundle.tasks.size(); ++i) {
        if (i < 200)
            train.tasks.push_back(bundle.tasks[i]);
        else
            eval_tasks.push_back(&bundle.tasks[i]);
    }

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.input_dim = 1;
    model.hidden_dims = {32, 32};
    model.output = OutputKind::scalar_regression;

    SineArm arm;
    for (std::uint64_t seed : seeds) {
        for (TrainerMode mode : {TrainerMode::timl, TrainerMode::maml}) {
            MetaState state = meta_train(sine_meta_config(mode, seed), model, train);
            std::vector<double> task_mse;
            for (const Task* task : eval_tasks) {
                // 10 shots, 10 plain gradient steps, query MSE on the rest
                std::vector<std::int64_t> all(static_cast<std::size_t>(task->rows()));
                std::iota(all.begin(), all.end(), std::int64_t{0});
                Rng shot_rng(Rng::derive(seed, {rng_tag::eval, 0x51e}));
                auto perm = shot_rng.permutation(all.size());
                std::vector<std::int64_t> shots, query;
                for (std::size_t i = 0; i < all.size(); ++i)
                    (i < 10 ? shots : query).push_back(all[perm[i]]);
                std::sort(shots.begin(), shots.end());
                std::sort(query.begin(), query.end());
                ParamSet tuned = finetune(state, *task, shots, 10, seed);
                TaskEmbedding emb;
                const TaskEmbedding* emb_ptr = nullptr;
                if (state.uses_encoder()) {
                    emb = state.task_embedding(task->info);
                    emb_ptr = &emb;
                }
                std::vector<double> preds = predict_scores(state.model, tuned, emb_ptr, *task, query);
                Batch qb = rows_to_batch(*task, query);
                task_mse.push_back(mse(preds, qb.y.values()));
            }
            double mean_mse = mean_stderr(task_mse).mean;
            (mode == TrainerMode::timl ? arm.timl : arm.maml).push_back(mean_mse);
        }
    }
    return arm;
}

void criterion_3() {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    SineArm informative = run_sine_arm(true, seeds);
    int wins = 0;
    std::vector<double> rel;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        if (informative.timl[s] < informative.maml[s]) ++wins;
        rel.push_back((informative.maml[s] - informative.timl[s]) / informative.maml[s]);
    }
    double mean_rel = mean_stderr(rel).mean;

    SineArm uninformative = run_sine_arm(false, seeds);
    std::vector<double> diff;
    for (std::size_t s = 0; s < seeds.size(); ++s)
        diff.push_back(uninformative.maml[s] - uninformative.timl[s]);
    MeanStderr d = mean_stderr(diff);
    bool null_arm_ok = std::fabs(d.mean) <= d.stderr_;

    bool pass = wins >= 4 && mean_rel >= 0.20 && null_arm_ok;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "informative: %d/5 wins, rel +%.0f%%; uninformative: |d|=%.3f vs se=%.3f",
                  wins, 100 * mean_rel, std::fabs(d.mean), d.stderr_);
    report(3, "timl beats maml iff metadata informs", pass, elapsed(t0), buf);
}

// ---------------------------------------------------------------- criterion 4

struct ForgetArm {
    std::vector<double> hard_auc;
    std::vector<double> easy_auc;
};

ForgetArm run_forget_arm(bool forgetful, const std::vector<std::uint64_t>& seeds,
                         const TaskBundle& bundle) {
    TaskBundle train;
    train.feature_dim = bundle.feature_dim;
    train.info_dim = 3;
    std::vector<const Task*> eval_easy, eval_hard;
    std::size_t n = bundle.tasks.size();
    std::size_t n_easy = static_cast<std::size_t>(std::lround(0.9 * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
        const Task& t = bundle.tasks[i];
        bool hold_easy = t.has_tag("easy") && i >= n_easy - 5;
        bool hold_hard = t.has_tag("hard") && i >= n - 5;
        if (hold_easy)
            eval_easy.push_back(&t);
        else if (hold_hard)
            eval_hard.push_back(&t);
        else
            train.tasks.push_back(t);
    }

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.input_dim = bundle.feature_dim;
    model.hidden_dims = {32, 32};
    model.output = OutputKind::binary_logit;

    ForgetArm arm;
    for (std::uint64_t seed : seeds) {
        MetaConfig cfg;
        cfg.mode = TrainerMode::timl;
        cfg.inner_lr = 0.05;
        cfg.inner_steps = 1;
        cfg.outer_lr = 1e-3;
        cfg.outer_lr_min = 1e-4;
        cfg.epochs = 45;
        cfg.meta_batch_size = 8;
        cfg.seed = seed;
        cfg.encoder_dropout = 0.0;
        // both arms are evaluated at the final epoch: the random validation
        // pool is easy-dominated at this scale, so loss-based checkpoint
        // selection would discard exactly the hard-task progress the
        // comparison measures
        cfg.validation_fraction = 0.0;
        cfg.threads = 2;
        cfg.forget.enabled = forgetful;
        MetaState state = meta_train(cfg, model, train);

        auto eval_mean = [&](const std::vector<const Task*>& tasks) {
            std::vector<double> aucs;
            for (const Task* task : tasks) {
                std::vector<std::int64_t> all(static_cast<std::size_t>(task->rows()));
                std::iota(all.begin(), all.end(), std::int64_t{0});
                Batch shot_batch = sample_balanced_batch(*task, 10, 10, Rng::derive(seed, {rng_tag::eval, 4}));
                std::set<std::int64_t> shot_set(shot_batch.indices.begin(), shot_batch.indices.end());
                std::vector<std::int64_t> shots(shot_set.begin(), shot_set.end());
                std::vector<std::int64_t> query;
                for (std::int64_t r : all)
                    if (!shot_set.count(r)) query.push_back(r);
                ParamSet tuned = finetune(state, *task, shots, 10, seed);
                TaskEmbedding emb;
                const TaskEmbedding* emb_ptr = nullptr;
                if (state.uses_encoder()) {
                    emb = state.task_embedding(task->info);
                    emb_ptr = &emb;
                }
                std::vector<double> scores = predict_scores(state.model, tuned, emb_ptr, *task, query);
                Batch qb = rows_to_batch(*task, query);
                aucs.push_back(auc_roc(scores, qb.y.values()));
            }
            return mean_stderr(aucs).mean;
        };
        arm.hard_auc.push_back(eval_mean(eval_hard));
        arm.easy_auc.push_back(eval_mean(eval_easy));
    }
    return arm;
}

void criterion_4() {
    auto t0 = std::chrono::steady_clock::now();
    SynthSpec mix;
    mix.family = SynthFamily::imbalanced_mix;
    mix.num_tasks = 200;
    mix.points_per_task = 80;
    mix.feature_dim = 8;
    mix.easy_ratio = 0.9;
    mix.easy_margin = 1.0;
    mix.hard_margin = 0.05;
    mix.seed = 4321;
    TaskBundle bundle = gen_imbalanced_mix(mix);

    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    ForgetArm with = run_forget_arm(true, seeds, bundle);
    ForgetArm without = run_forget_arm(false, seeds, bundle);

    int wins = 0;
    double easy_drop = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        if (with.hard_auc[s] > without.hard_auc[s]) ++wins;
        easy_drop += without.easy_auc[s] - with.easy_auc[s];
    }
    easy_drop /= static_cast<double>(seeds.size());

    bool pass = wins >= 4 && easy_drop < 0.02;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "hard-task wins %d/5, easy degradation %.4f (< 0.02)", wins,
                  easy_drop);
    report(4, "forgetfulness helps hard tasks", pass, elapsed(t0), buf);
}

// ---------------------------------------------------------------- criterion 5

void criterion_5() {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    using Decision = MemorizationTracker::Decision;
    {
        MemorizationTracker tr = MemorizationTracker::for_classification({});
        ok &= tr.threshold() == 0.95 && tr.window() == 20;
        for (int e = 0; e < 19; ++e) ok &= tr.record_and_prune("t", 0.96) == Decision::keep;
        ok &= tr.record_and_prune("t", 0.96) == Decision::forget;
    }
    {
        // streak reset: 19 good epochs, one miss, then 20 more
        MemorizationTracker tr = MemorizationTracker::for_classification({});
        for (int e = 0; e < 19; ++e) tr.record_and_prune("t", 0.99);
        ok &= tr.record_and_prune("t", 0.94) == Decision::keep;
        for (int e = 0; e < 19; ++e) ok &= tr.record_and_prune("t", 0.96) == Decision::keep;
        ok &= tr.record_and_prune("t", 0.96) == Decision::forget;
    }
    {
        MemorizationTracker tr = MemorizationTracker::for_regression({});
        ok &= tr.threshold() == 4.0;
        for (int e = 0; e < 19; ++e) ok &= tr.record_and_prune("c", 3.5) == Decision::keep;
        ok &= tr.record_and_prune("c", 3.5) == Decision::forget;
        MemorizationTracker tr2 = MemorizationTracker::for_regression({});
        for (int e = 0; e < 40; ++e) ok &= tr2.record_and_prune("c", 4.01) == Decision::keep;
    }
    {
        // boundary values count ("0.95 or above", "4 or less")
        MemorizationTracker ta = MemorizationTracker::for_classification({});
        for (int e = 0; e < 20; ++e) ta.record_and_prune("b", 0.95);
        ok &= ta.is_forgotten("b");
        MemorizationTracker tb = MemorizationTracker::for_regression({});
        for (int e = 0; e < 20; ++e) tb.record_and_prune("b", 4.0);
        ok &= tb.is_forgotten("b");
    }
    report(5, "forgetfulness bookkeeping", ok, elapsed(t0), "window 20, auc>=0.95, rmse<=4");
}

// ---------------------------------------------------------------- criterion 6

void criterion_6() {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail = "all encodings exact";

    // unit-norm spatial triple everywhere
    Rng rng(6);
    for (int i = 0; i < 500; ++i) {
        auto v = latlon_to_cartesian(rng.uniform(-90, 90), rng.uniform(-180, 180));
        ok &= std::fabs(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - 1.0) <= 1e-12;
    }
    auto origin = latlon_to_cartesian(0, 0);
    ok &= origin[0] == 1.0 && origin[1] == 0.0 && origin[2] == 0.0;
    auto pole = latlon_to_cartesian(90, 45);
    ok &= std::fabs(pole[2] - 1.0) < 1e-15 && std::fabs(pole[0]) < 1e-15;
    auto ref = latlon_to_cartesian(45, -120);
    ok &= std::fabs(ref[0] + 0.35355339059327373) < 1e-12;
    ok &= std::fabs(ref[1] + 0.61237243569579452) < 1e-12;
    ok &= std::fabs(ref[2] - 0.70710678118654752) < 1e-12;

    // crop vector: 13 dims, one-hot and 1/9 spreading
    TaskInfo maize = crop_task_info("maize", 0, 0);
    ok &= maize.size() == 13 && maize.values[3] == 1.0;
    double cat = 0;
    for (int i = 3; i < 13; ++i) cat += maize.values[static_cast<std::size_t>(i)];
    ok &= cat == 1.0;
    TaskInfo cvn = crop_vs_noncrop_task_info(0, 0);
    for (int i = 3; i < 12; ++i) ok &= std::fabs(cvn.values[static_cast<std::size_t>(i)] - 1.0 / 9) < 1e-15;
    ok &= cvn.values[12] == 0.0;

    // yield vector: 3 + num_states with a one-hot state block
    TaskInfo yield = yield_task_info(41.9, -93.6, 3, 11);
    ok &= yield.size() == 14;
    double block = 0;
    for (int i = 3; i < 14; ++i) block += yield.values[static_cast<std::size_t>(i)];
    ok &= block == 1.0 && yield.values[6] == 1.0;
    TaskInfo same_state = yield_task_info(40.1, -94.8, 3, 11);
    for (int i = 3; i < 14; ++i)
        ok &= yield.values[static_cast<std::size_t>(i)] == same_state.values[static_cast<std::size_t>(i)];

    // longitude wraparound proximity
    auto dist = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    ok &= dist(latlon_to_cartesian(10, 179.9), latlon_to_cartesian(10, -179.9)) <
          dist(latlon_to_cartesian(10, 0), latlon_to_cartesian(10, 10));

    // error paths
    try {
        latlon_to_cartesian(91, 0);
        ok = false;
    } catch (const ConfigError&) {
    }
    try {
        yield_task_info(0, 0, 11, 11);
        ok = false;
    } catch (const ConfigError&) {
    }
    try {
        crop_task_info("unknown_crop", 0, 0);
        ok = false;
    } catch (const ConfigError&) {
    }
    report(6, "task-information encodings", ok, elapsed(t0), detail);
}

// ---------------------------------------------------------------- criterion 7
// (dense-inverse oracle lives in the shared header below)

std::vector<long double> invert_ld(std::vector<long double> a, int n) {
    std::vector<long double> inv(static_cast<std::size_t>(n * n), 0.0L);
    for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(i * n + i)] = 1.0L;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(static_cast<double>(a[static_cast<std::size_t>(r * n + col)])) >
                std::fabs(static_cast<double>(a[static_cast<std::size_t>(pivot * n + col)])))
                pivot = r;
        for (int c = 0; c < n; ++c) {
            std::swap(a[static_cast<std::size_t>(col * n + c)], a[static_cast<std::size_t>(pivot * n + c)]);
            std::swap(inv[static_cast<std::size_t>(col * n + c)], inv[static_cast<std::size_t>(pivot * n + c)]);
        }
        long double d = a[static_cast<std::size_t>(col * n + col)];
        for (int c = 0; c < n; ++c) {
            a[static_cast<std::size_t>(col * n + c)] /= d;
            inv[static_cast<std::size_t>(col * n + c)] /= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            long double f = a[static_cast<std::size_t>(r * n + col)];
            for (int c = 0; c < n; ++c) {
                a[static_cast<std::size_t>(r * n + c)] -= f * a[static_cast<std::size_t>(col * n + c)];
                inv[static_cast<std::size_t>(r * n + c)] -= f * inv[static_cast<std::size_t>(col * n + c)];
            }
        }
    }
    return inv;
}

void criterion_7() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(707);
    double worst = 0;
    bool ok = true;

    for (int trial = 0; trial < 20; ++trial) {
        int n = 5 + static_cast<int>(rng.below(26));
        int p = static_cast<int>(rng.below(4));
        GPConfig cfg;
        cfg.signal_var = rng.uniform(0.5, 2.0);
        cfg.loc_scale = rng.uniform(0.5, 4.0);
        cfg.year_scale = rng.uniform(0.5, 4.0);
        cfg.noise_var = rng.uniform(0.01, 0.1);

        GPData train, test;
        train.hidden_dim = test.hidden_dim = p;
        for (int i = 0; i < n; ++i) {
            train.locations.push_back({rng.uniform(35, 48), rng.uniform(-105, -80)});
            train.years.push_back(2009 + static_cast<double>(rng.below(7)));
            for (int c = 0; c < p; ++c) train.hidden.push_back(rng.normal());
            train.targets.push_back(rng.uniform(20, 60));
        }
        for (int i = 0; i < 5; ++i) {
            test.locations.push_back({rng.uniform(35, 48), rng.uniform(-105, -80)});
            test.years.push_back(2009 + static_cast<double>(rng.below(7)));
            for (int c = 0; c < p; ++c) test.hidden.push_back(rng.normal());
        }
        std::vector<double> got = gp_fit_predict(train, test, cfg);

        // independent oracle: explicit long-double inverse
        auto kf = [&](const std::array<double, 2>& la, double ya, const std::array<double, 2>& lb,
                      double yb) {
            double d0 = la[0] - lb[0], d1 = la[1] - lb[1], dy = ya - yb;
            return cfg.signal_var * std::exp(-(d0 * d0 + d1 * d1) / (2 * cfg.loc_scale) -
                                             dy * dy / (2 * cfg.year_scale));
        };
        std::vector<long double> C(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                C[static_cast<std::size_t>(i * n + j)] =
                    kf(train.locations[static_cast<std::size_t>(i)], train.years[static_cast<std::size_t>(i)],
                       train.locations[static_cast<std::size_t>(j)], train.years[static_cast<std::size_t>(j)]);
                if (i == j) C[static_cast<std::size_t>(i * n + j)] += cfg.noise_var;
            }
        std::vector<long double> Cinv = invert_ld(C, n);
        auto matvec = [&](const std::vector<long double>& v) {
            std::vector<long double> out(static_cast<std::size_t>(n), 0.0L);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    out[static_cast<std::size_t>(i)] += Cinv[static_cast<std::size_t>(i * n + j)] * v[static_cast<std::size_t>(j)];
            return out;
        };
        std::vector<long double> beta(static_cast<std::size_t>(p), 0.0L);
        if (p > 0) {
            std::vector<long double> A(static_cast<std::size_t>(p) * p, 0.0L);
            std::vector<long double> rhs(static_cast<std::size_t>(p), 0.0L);
            for (int a = 0; a < p; ++a) {
                std::vector<long double> col(static_cast<std::size_t>(n));
                for (int r = 0; r < n; ++r) col[static_cast<std::size_t>(r)] = train.hidden[static_cast<std::size_t>(r * p + a)];
                auto ci = matvec(col);
                for (int b = 0; b < p; ++b)
                    for (int r = 0; r < n; ++r)
                        A[static_cast<std::size_t>(a * p + b)] += train.hidden[static_cast<std::size_t>(r * p + b)] * ci[static_cast<std::size_t>(r)];
                for (int r = 0; r < n; ++r) rhs[static_cast<std::size_t>(a)] += ci[static_cast<std::size_t>(r)] * train.targets[static_cast<std::size_t>(r)];
            }
            auto Ainv = invert_ld(A, p);
            for (int a = 0; a < p; ++a)
                for (int b = 0; b < p; ++b) beta[static_cast<std::size_t>(a)] += Ainv[static_cast<std::size_t>(a * p + b)] * rhs[static_cast<std::size_t>(b)];
        }
        std::vector<long double> resid(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) {
            long double m = 0;
            for (int c = 0; c < p; ++c) m += train.hidden[static_cast<std::size_t>(r * p + c)] * beta[static_cast<std::size_t>(c)];
            resid[static_cast<std::size_t>(r)] = train.targets[static_cast<std::size_t>(r)] - m;
        }
        auto w = matvec(resid);
        for (int ti = 0; ti < 5; ++ti) {
            long double want = 0;
            for (int c = 0; c < p; ++c) want += test.hidden[static_cast<std::size_t>(ti * p + c)] * beta[static_cast<std::size_t>(c)];
            for (int r = 0; r < n; ++r)
                want += kf(test.locations[static_cast<std::size_t>(ti)], test.years[static_cast<std::size_t>(ti)],
                           train.locations[static_cast<std::size_t>(r)], train.years[static_cast<std::size_t>(r)]) *
                        w[static_cast<std::size_t>(r)];
            double err = std::fabs(got[static_cast<std::size_t>(ti)] - static_cast<double>(want)) /
                         std::max(1.0, std::fabs(static_cast<double>(want)));
            worst = std::max(worst, err);
        }
    }
    ok &= worst < 1e-8;

    // kernel limit cases are exact
    GPConfig cfg;
    cfg.signal_var = 1.3;
    cfg.noise_var = 0.02;
    std::array<double, 2> pnt = {40, -90};
    ok &= gp_kernel(pnt, 2010, pnt, 2010, cfg) == cfg.signal_var + cfg.noise_var;
    std::array<double, 2> offp = {40 + std::sqrt(2 * cfg.loc_scale), -90};
    ok &= std::fabs(gp_kernel(pnt, 2010, offp, 2010, cfg) - cfg.signal_var * std::exp(-1.0)) < 1e-15;

    char buf[120];
    std::snprintf(buf, sizeof(buf), "worst oracle error %.2e (< 1e-8), limits exact", worst);
    report(7, "gp baseline vs dense-inverse oracle", ok, elapsed(t0), buf);
}

// ---------------------------------------------------------------- criterion 8

void criterion_8() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(808);
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 2 + rng.below(40);
        std::vector<double> scores(n), labels(n);
        bool ties = trial % 4 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = ties ? std::round(rng.uniform() * 5) / 5 : rng.uniform();
            labels[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        labels[0] = 1.0;
        labels[n - 1] = 0.0;
        double fast = auc_roc(scores, labels);
        double wins = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] != 0.0) continue;
                pairs += 1;
                if (scores[i] > scores[j]) wins += 1;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        }
        if (std::fabs(fast - wins / pairs) > 1e-12) ok = false;
    }
    // f1 zero convention: no predicted positives
    std::vector<double> s = {0.1, 0.2, 0.4}, y = {1, 1, 0};
    ok &= f1_at_half(s, y) == 0.0;
    std::vector<double> s2 = {0.6, 0.7, 0.4, 0.9}, y2 = {1, 1, 0, 1};
    ok &= f1_at_half(s2, y2) == 1.0;
    report(8, "metric oracles", ok, elapsed(t0), "auc == brute force on 1000 instances, f1 zero convention");
}

// ---------------------------------------------------------------- criterion 9

void criterion_9() {
    auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    std::string dir = (fs::temp_directory_path() / "timl_acceptance_det").string();
    fs::remove_all(dir);
    KvConfig kv = KvConfig::from_string(
        "mode = timl\n"
        "synth.family = sine\n"
        "synth.num_tasks = 12\n"
        "synth.points_per_task = 24\n"
        "synth.seed = 9\n"
        "model.kind = mlp\n"
        "model.hidden = 8,8\n"
        "inner_lr = 0.01\n"
        "outer_lr = 1e-3\n"
        "outer_lr_min = 1e-4\n"
        "epochs = 3\n"
        "meta_batch_size = 4\n"
        "encoder.trunk_width = 8\n"
        "encoder.norm_groups = 2\n"
        "seed = 21\n"
        "repeats = 2\n"
        "eval.holdout = 2\n"
        "eval.shots = 8\n"
        "eval.steps = 5\n"
        "run_name = determinism\n"
        "results_dir = " + dir + "\n");
    auto first = run_experiment(kv);
    auto second = run_experiment(kv);
    bool ok = first.size() == 1 && second.size() == 1 &&
              stable_fingerprint(first[0]) == stable_fingerprint(second[0]) &&
              first[0].artifact_hash == second[0].artifact_hash;
    report(9, "run_experiment determinism", ok, elapsed(t0),
           ok ? "identical records (timestamps excluded)" : "records differ");
}

} // namespace

int main() {
    std::printf("acceptance suite\n----------------\n");
    criterion_1();
    criterion_2();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_3();
    criterion_4();
    std::printf("----------------\n%s\n", g_failures == 0 ? "all criteria passed"
                                                          : "ACCEPTANCE FAILURES PRESENT");
    return g_failures == 0 ? 0 : 1;
}
