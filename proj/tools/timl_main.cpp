// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "timl/checkpoint.hpp"
#include "timl/gp.hpp"
#include "timl/harness.hpp"

using namespace timl;

namespace {

int cmd_train(const std::string& config_path, const std::string& checkpoint_dir) {
    KvConfig kv = KvConfig::load(config_path);
    TaskBundle bundle = bundle_from_kv(kv);
    ModelSpec model = model_spec_from_kv(kv, bundle);
    ExperimentMode mode = experiment_mode_from_name(kv.get("mode", "timl"));
    if (mode != ExperimentMode::timl && mode != ExperimentMode::maml)
        throw ConfigError("train: mode must be timl or maml (pretrain/scratch run via `timl run`)");
    MetaConfig cfg = meta_config_from_kv(kv, mode);
    MetaState state = meta_train(cfg, model, bundle);
    save_checkpoint(state, checkpoint_dir);
    std::printf("trained %d epochs; best validation metric %.6f at epoch %d\n", cfg.epochs,
                state.best_metric, state.best_epoch);
    std::printf("checkpoint written to %s\n", checkpoint_dir.c_str());
    return 0;
}

int cmd_finetune(const std::string& checkpoint_dir, const std::string& bundle_dir,
                 const std::string& task_id, int steps, std::uint64_t seed,
                 const std::string& out_dir) {
    MetaState state = load_checkpoint(checkpoint_dir);
    TaskBundle bundle = load_bundle(bundle_dir);
    const Task& task = bundle.by_id(task_id);
    std::vector<std::int64_t> rows(static_cast<std::size_t>(task.rows()));
    std::iota(rows.begin(), rows.end(), std::int64_t{0});
    ParamSet tuned = finetune(state, task, rows, steps, seed);
    state.learner = tuned;
    state.best_learner = tuned;
    state.has_best = true;
    if (!out_dir.empty()) {
        save_checkpoint(state, out_dir);
        std::printf("fine-tuned parameters written to %s\n", out_dir.c_str());
    }
    TaskEmbedding emb;
    const TaskEmbedding* emb_ptr = nullptr;
    if (state.uses_encoder()) {
        emb = state.task_embedding(task.info);
        emb_ptr = &emb;
    }
    std::vector<double> scores = predict_scores(state.model, tuned, emb_ptr, task, rows);
    Batch all = rows_to_batch(task, rows);
    std::printf("%s on fine-tuning rows: %.6f\n",
                task.kind == TaskKind::classification ? "auc_roc" : "rmse",
                task_metric(task.kind, scores, all.y.values()));
    return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& bundle_dir,
             const std::string& task_id, bool zero_shot, int steps, std::uint64_t seed,
             const std::string& dump_hidden, int year_feature) {
    MetaState state = load_checkpoint(checkpoint_dir);
    TaskBundle bundle = load_bundle(bundle_dir);

    std::vector<const Task*> tasks;
    if (task_id.empty())
        for (const Task& t : bundle.tasks) tasks.push_back(&t);
    else
        tasks.push_back(&bundle.by_id(task_id));

    std::ofstream hidden_csv;
    if (!dump_hidden.empty()) {
        hidden_csv.open(dump_hidden);
        if (!hidden_csv) throw IoError("cannot write " + dump_hidden);
        std::int64_t width = 0;
        if (state.model.kind == ModelKind::mlp)
            width = state.model.hidden_dims.empty() ? state.model.input_dim
                                                    : state.model.hidden_dims.back();
        else
            width = state.model.hidden_size;
        hidden_csv << "task_id,row,lat,lon,year,label,pred";
        for (std::int64_t c = 0; c < width; ++c) hidden_csv << ",h" << c;
        hidden_csv << "\n";
    }

    for (const Task* task : tasks) {
        std::vector<std::int64_t> rows(static_cast<std::size_t>(task->rows()));
        std::iota(rows.begin(), rows.end(), std::int64_t{0});

        TaskEmbedding emb;
        const TaskEmbedding* emb_ptr = nullptr;
        if (state.uses_encoder()) {
            emb = state.task_embedding(task->info);
            emb_ptr = &emb;
        }
        ParamSet params = state.checkpoint_learner();
        bool zs = zero_shot || steps == 0;
        if (!zs) params = finetune(state, *task, rows, steps, seed);
        Batch batch = rows_to_batch(*task, rows);
        ForwardResult fwd = forward_with_hidden(state.model, params, batch.x, emb_ptr);
        double metric = task_metric(task->kind, fwd.output.values(), batch.y.values());
        std::printf("%-24s %s %s = %.6f%s\n", task->id.c_str(),
                    task_kind_name(task->kind), task->kind == TaskKind::classification ? "auc_roc" : "rmse",
                    metric, zs ? "  [zero-shot]" : "");

        if (hidden_csv.is_open()) {
            std::int64_t width = fwd.hidden.dim(1);
            for (std::int64_t r = 0; r < batch.size(); ++r) {
                double year = 0.0;
                if (year_feature >= 0 && year_feature < task->row_width())
                    year = task->features[static_cast<std::size_t>(r * task->row_width() + year_feature)];
                hidden_csv << task->id << ',' << r << ',' << task->bbox.centroid_lat() << ','
                           << task->bbox.centroid_lon() << ',' << year << ',' << batch.y[r] << ','
                           << fwd.output[r];
                for (std::int64_t c = 0; c < width; ++c) hidden_csv << ',' << fwd.hidden[r * width + c];
                hidden_csv << '\n';
            }
        }
    }
    return 0;
}

GPData load_hidden_csv(const std::string& path, bool with_targets) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError(path + ": empty");
    std::stringstream hs(line);
    std::string cell;
    std::vector<std::string> header;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
    std::int64_t hidden_dim = 0;
    for (const std::string& name : header)
        if (name.size() > 1 && name[0] == 'h' && std::isdigit(static_cast<unsigned char>(name[1])))
            ++hidden_dim;
    GPData data;
    data.hidden_dim = hidden_dim;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        data.locations.push_back({std::stod(cells[2]), std::stod(cells[3])});
        data.years.push_back(std::stod(cells[4]));
        if (with_targets) data.targets.push_back(std::stod(cells[5]));
        for (std::int64_t c = 0; c < hidden_dim; ++c)
            data.hidden.push_back(std::stod(cells[static_cast<std::size_t>(7 + c)]));
    }
    return data;
}

int cmd_gp(const std::string& train_csv, const std::string& test_csv, const std::string& out_csv,
           const GPConfig& cfg) {
    GPData train = load_hidden_csv(train_csv, true);
    GPData test = load_hidden_csv(test_csv, false);
    std::vector<double> preds = gp_fit_predict(train, test, cfg);
    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot write " + out_csv);
    out << "row,prediction\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", preds[i]);
        out << i << ',' << buf << '\n';
    }
    std::printf("wrote %zu predictions to %s\n", preds.size(), out_csv.c_str());
    return 0;
}

int cmd_gradcheck() {
    Rng rng(12345);
    auto rand_tensor = [&](Shape shape) {
        std::vector<double> d(static_cast<std::size_t>(numel(shape)));
        for (double& v : d) v = rng.uniform(-1.5, 1.5);
        return tensor(std::move(shape), std::move(d));
    };
    int failures = 0;
    auto check = [&](const char* name, double err, double tol) {
        bool ok = err < tol;
        std::printf("%-34s max rel err %.3e  (tol %.0e)  %s\n", name, err, tol, ok ? "ok" : "FAIL");
        if (!ok) ++failures;
    };

    {
        ParamSet p(std::map<std::string, Tensor>{{"x", rand_tensor({6})}});
        for (auto [name, fn] : std::initializer_list<std::pair<const char*, Tensor (*)(const Tensor&)>>{
                 {"sigmoid", &sigmoid}, {"tanh", &tanh}, {"gelu", &gelu}, {"softplus", &softplus}}) {
            auto f = [fn](const ParamSet& q) { return sum(fn(q.at("x"))); };
            check(name, finite_diff_check(f, p, 1e-5), 1e-5);
        }
    }
    {
        ParamSet p(std::map<std::string, Tensor>{{"w1", rand_tensor({4, 16})},
                                                 {"w2", rand_tensor({16, 1})}});
        Tensor x = rand_tensor({12, 4});
        Tensor y = tensor({12}, {1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1});
        auto f = [x, y](const ParamSet& q) {
            Tensor h = gelu(matmul(x, q.at("w1")));
            return bce_with_logits(reshape(matmul(h, q.at("w2")), {12}), y);
        };
        check("2-layer MLP + BCE", finite_diff_check(f, p, 1e-5), 1e-5);
    }
    {
        // meta-gradient of one inner step on a tiny MLP
        ParamSet p(std::map<std::string, Tensor>{{"w1", rand_tensor({2, 8})},
                                                 {"w2", rand_tensor({8, 1})}});
        Tensor xs = rand_tensor({6, 2});
        Tensor ys = rand_tensor({6});
        Tensor xq = rand_tensor({6, 2});
        Tensor yq = rand_tensor({6});
        auto f = [&](const ParamSet& q) {
            auto model = [&](const ParamSet& w, const Tensor& x) {
                return reshape(matmul(gelu(matmul(x, w.at("w1"))), w.at("w2")), {6});
            };
            Tensor support_loss = squared_error(model(q, xs), ys);
            ParamSet gs = grad(support_loss, q, {.create_graph = true, .allow_unused = true});
            ParamSet adapted = q;
            for (const auto& [name, t] : q) adapted.set(name, sub(t, scale(gs.at(name), 0.05)));
            return squared_error(model(adapted, xq), yq);
        };
        check("one-inner-step meta-gradient", finite_diff_check(f, p, 1e-4), 1e-4);
    }
    {
        Tensor theta = tensor({}, {1.0}, true);
        Tensor inner = mul(theta, theta);
        auto g = grad(inner, std::span<const Tensor>(&theta, 1), {.create_graph = true});
        Tensor adapted = sub(theta, scale(g[0], 0.1));
        auto meta = grad(mul(adapted, adapted), std::span<const Tensor>(&theta, 1));
        check("scalar meta-gradient vs 1.28", std::fabs(meta[0].item() - 1.28), 1e-10);
    }
    std::printf(failures == 0 ? "gradcheck: all checks passed\n"
                              : "gradcheck: %d check(s) FAILED\n",
                failures);
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"timl: task-informed meta-learning toolkit"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_dir, bundle_dir, task_id, out_dir, dump_hidden;
    std::string train_csv, test_csv, out_csv, results_dir;
    std::uint64_t seed = 0;
    int steps = 250;
    bool zero_shot = false;
    int year_feature = -1;

    auto* train = app.add_subcommand("train", "Meta-train from a config file");
    train->add_option("--config", config_path, "flat key=value config")->required();
    train->add_option("--checkpoint", checkpoint_dir, "output checkpoint directory")->required();

    auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on one task");
    ft->add_option("--checkpoint", checkpoint_dir)->required();
    ft->add_option("--bundle", bundle_dir)->required();
    ft->add_option("--task", task_id)->required();
    ft->add_option("--steps", steps, "gradient steps (250 crop / 15 yield conventions)");
    ft->add_option("--seed", seed);
    ft->add_option("--out", out_dir, "write fine-tuned checkpoint here");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on bundle tasks");
    ev->add_option("--checkpoint", checkpoint_dir)->required();
    ev->add_option("--bundle", bundle_dir)->required();
    ev->add_option("--task", task_id, "single task id (default: all)");
    ev->add_flag("--zero-shot", zero_shot, "no fine-tuning before evaluation");
    ev->add_option("--steps", steps, "fine-tuning steps when not zero-shot");
    ev->add_option("--seed", seed);
    ev->add_option("--dump-hidden", dump_hidden, "write final hidden features CSV");
    ev->add_option("--year-feature", year_feature, "feature column used as the year");

    auto* synth = app.add_subcommand("synth", "Synthetic benchmark utilities");
    auto* gen = synth->add_subcommand("gen", "Generate a task bundle");
    std::string family = "sine", out_bundle = "bundle";
    std::int64_t num_tasks = 100, points = 64;
    std::uint64_t synth_seed = 0;
    double noise_sd = 0.01;
    bool uninformative = false;
    gen->add_option("--family", family, "sine | sphere | imbalanced")->required();
    gen->add_option("--out", out_bundle, "output directory")->required();
    gen->add_option("--num-tasks", num_tasks);
    gen->add_option("--points", points);
    gen->add_option("--seed", synth_seed);
    gen->add_option("--noise-sd", noise_sd);
    gen->add_flag("--uninformative", uninformative, "zero out task information");

    auto* tasks_cmd = app.add_subcommand("tasks", "Task bundle utilities");
    auto* validate = tasks_cmd->add_subcommand("validate", "Check every bundle invariant");
    std::string validate_dir;
    validate->add_option("dir", validate_dir, "bundle directory")->required();

    auto* run = app.add_subcommand("run", "Run a full experiment from a config file");
    run->add_option("--config", config_path)->required();

    auto* report = app.add_subcommand("report", "Verify and summarize a results directory");
    report->add_option("dir", results_dir)->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");

    auto* gp = app.add_subcommand("gp", "Residual Gaussian process over (location, year)");
    GPConfig gp_cfg;
    gp->add_option("--train", train_csv, "hidden-features CSV with labels")->required();
    gp->add_option("--test", test_csv, "hidden-features CSV to predict")->required();
    gp->add_option("--out", out_csv, "predictions CSV")->required();
    gp->add_option("--signal-var", gp_cfg.signal_var);
    gp->add_option("--loc-scale", gp_cfg.loc_scale);
    gp->add_option("--year-scale", gp_cfg.year_scale);
    gp->add_option("--noise-var", gp_cfg.noise_var);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, checkpoint_dir);
        if (ft->parsed()) return cmd_finetune(checkpoint_dir, bundle_dir, task_id, steps, seed, out_dir);
        if (ev->parsed())
            return cmd_eval(checkpoint_dir, bundle_dir, task_id, zero_shot, zero_shot ? 0 : steps,
                            seed, dump_hidden, year_feature);
        if (gen->parsed()) {
            SynthSpec spec;
            spec.family = synth_family_from_name(family);
            spec.num_tasks = static_cast<int>(num_tasks);
            spec.points_per_task = static_cast<int>(points);
            spec.seed = synth_seed;
            spec.noise_sd = noise_sd;
            spec.metadata_informative = !uninformative;
            save_bundle(generate_bundle(spec), out_bundle);
            std::printf("wrote %lld %s tasks to %s\n", static_cast<long long>(num_tasks),
                        family.c_str(), out_bundle.c_str());
            return 0;
        }
        if (validate->parsed()) {
            auto problems = validate_bundle(validate_dir);
            if (problems.empty()) {
                std::printf("%s: all invariants hold\n", validate_dir.c_str());
                return 0;
            }
            for (const std::string& p : problems) std::fprintf(stderr, "violation: %s\n", p.c_str());
            return 1;
        }
        if (run->parsed()) {
            auto records = run_experiment(config_path);
            for (const RunRecord& r : records) {
                std::printf("record: %s\n", r.results_dir.c_str());
                for (const auto& [metric, ms] : r.aggregate)
                    std::printf("  %-10s %.4f +/- %.4f (n=%zu)\n", metric.c_str(), ms.mean,
                                ms.stderr_, ms.n);
            }
            return 0;
        }
        if (report->parsed()) {
            std::fputs(report_results(results_dir).c_str(), stdout);
            return 0;
        }
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (gp->parsed()) return cmd_gp(train_csv, test_csv, out_csv, gp_cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
