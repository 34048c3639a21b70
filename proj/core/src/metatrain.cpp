// SPDX-License-Identifier: Apache-2.0
#include "timl/metatrain.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "timl/metrics.hpp"
#include "timl/rng.hpp"

namespace timl {

namespace {

std::uint64_t task_uid(const std::string& id) {
    // FNV-1a; stable across runs and modes
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
    ParamSet out = params;
    for (const auto& [name, p] : params) {
        Tensor updated = sub(p, scale(grads.at(name), lr));
        out.set(name, tensor(p.shape(), updated.values(), true));
    }
    return out;
}

Batch draw_batch(const Task& task, std::span<const std::int64_t> rows, const MetaConfig& cfg,
                 std::uint64_t seed) {
    if (task.kind == TaskKind::classification)
        return sample_balanced_batch(task, rows, cfg.batch_pos, cfg.batch_neg, seed);
    return sample_uniform_batch(task, rows, cfg.batch_regression, seed);
}

// Deterministic indexed parallel map: results land in slots by index and
// exceptions are rethrown in index order, so thread count never changes
// behavior.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&](std::size_t tid, std::size_t stride) {
        for (std::size_t i = tid; i < n; i += stride) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < k; ++t) pool.emplace_back(worker, t, k);
    worker(0, k);
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < n; ++i)
        if (errors[i]) std::rethrow_exception(errors[i]);
}

struct TaskWork {
    Tensor query_loss;
    double metric = 0;
};

} // namespace

const char* trainer_mode_name(TrainerMode mode) {
    return mode == TrainerMode::timl ? "timl" : "maml";
}

TrainerMode trainer_mode_from_name(const std::string& name) {
    if (name == "timl") return TrainerMode::timl;
    if (name == "maml") return TrainerMode::maml;
    throw ConfigError("unknown trainer mode '" + name + "'");
}

void MetaConfig::validate() const {
    if (inner_lr <= 0) throw ConfigError("config: inner_lr must be positive");
    if (outer_lr <= 0 || outer_lr_min <= 0) throw ConfigError("config: outer rates must be positive");
    if (outer_lr_min > outer_lr) throw ConfigError("config: outer_lr_min must not exceed outer_lr");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (meta_batch_size < 1) throw ConfigError("config: meta_batch_size must be >= 1");
    if (inner_steps < 0) throw ConfigError("config: inner_steps must be >= 0");
    if (validation_fraction < 0 || validation_fraction > 0.5)
        throw ConfigError("config: validation_fraction must be in [0, 0.5]");
    if (batch_pos < 1 || batch_neg < 1 || batch_regression < 1)
        throw ConfigError("config: batch sizes must be >= 1");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
}

TaskEmbedding MetaState::task_embedding(const TaskInfo& info) const {
    if (!uses_encoder()) return identity_embedding(model.encoder_heads());
    return encode(info, *encoder, checkpoint_encoder());
}

MetaState init_meta_state(const MetaConfig& cfg, const ModelSpec& model, TaskKind kind) {
    cfg.validate();
    model.validate();
    MetaState state;
    state.config = cfg;
    state.model = model;
    state.learner = init_params(model, Rng::derive(cfg.seed, {rng_tag::init, 1}));
    state.adam_learner = AdamState(state.learner);
    if (cfg.mode == TrainerMode::timl) {
        EncoderSpec enc;
        enc.input_dim = 0; // set by the caller once the bundle's info width is known
        enc.trunk_width = cfg.encoder_trunk_width;
        enc.trunk_blocks = cfg.encoder_trunk_blocks;
        enc.norm_groups = cfg.encoder_norm_groups;
        enc.dropout = cfg.encoder_dropout;
        enc.zero_init_heads = cfg.encoder_zero_init_heads;
        enc.heads = model.encoder_heads();
        state.encoder = enc;
    }
    if (cfg.forget.enabled)
        state.tracker = kind == TaskKind::classification
                            ? MemorizationTracker::for_classification(cfg.forget)
                            : MemorizationTracker::for_regression(cfg.forget);
    return state;
}

ParamSet inner_adapt(const ModelSpec& spec, const ParamSet& learner, const TaskEmbedding* embedding,
                     const Batch& support, double lr, int steps, bool first_order) {
    if (support.size() == 0) throw Error("inner_adapt: empty support batch");
    ParamSet adapted = learner;
    for (int s = 0; s < steps; ++s) {
        try {
            Tensor preds = forward(spec, adapted, support.x, embedding);
            Tensor loss = task_loss(spec, preds, support.y);
            ParamSet gs = grad(loss, adapted, {.create_graph = !first_order, .allow_unused = true});
            ParamSet next = adapted;
            for (const auto& [name, p] : adapted) next.set(name, sub(p, scale(gs.at(name), lr)));
            adapted = std::move(next);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("inner_adapt: aborted at step " + std::to_string(s + 1) + ": " +
                                 e.what());
        }
    }
    return adapted;
}

double task_metric(TaskKind kind, std::span<const double> scores, std::span<const double> labels) {
    return kind == TaskKind::classification ? auc_roc(scores, labels) : rmse(scores, labels);
}

OuterStats outer_step(MetaState& state, std::span<const Task* const> batch) {
    const MetaConfig& cfg = state.config;
    OuterStats stats;
    stats.lr = cosine_annealed_lr(cfg.outer_lr, cfg.outer_lr_min, state.epoch, cfg.epochs);

    bool train_encoder = state.uses_encoder() && !cfg.freeze_encoder;
    std::vector<TaskWork> work(batch.size());
    std::int64_t encodes = 0;

    ParamSet frozen_encoder;
    if (state.uses_encoder() && cfg.freeze_encoder) frozen_encoder = state.encoder_params.detached();

    try {
        parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
            const Task& task = *batch[i];
            std::uint64_t uid = task_uid(task.id);
            std::uint64_t e = static_cast<std::uint64_t>(state.epoch);
            SplitRows split =
                split_support_query(task, Rng::derive(cfg.seed, {rng_tag::split, e, uid}));
            Batch support =
                draw_batch(task, split.support, cfg, Rng::derive(cfg.seed, {rng_tag::batch, e, uid, 0}));
            Batch query =
                draw_batch(task, split.query, cfg, Rng::derive(cfg.seed, {rng_tag::batch, e, uid, 1}));

            // one encode per task; its output is reused by every inner step
            // and by the query pass
            TaskEmbedding embedding;
            const TaskEmbedding* emb_ptr = nullptr;
            if (state.uses_encoder()) {
                DropoutMasks masks;
                const DropoutMasks* masks_ptr = nullptr;
                if (state.encoder->dropout > 0) {
                    Rng drop_rng(Rng::derive(cfg.seed, {rng_tag::dropout, e, uid}));
                    masks = sample_dropout_masks(*state.encoder, drop_rng);
                    masks_ptr = &masks;
                }
                const ParamSet& enc_params =
                    cfg.freeze_encoder ? frozen_encoder : state.encoder_params;
                embedding = encode(task.info, *state.encoder, enc_params, masks_ptr);
                emb_ptr = &embedding;
            }

            ParamSet adapted = inner_adapt(state.model, state.learner, emb_ptr, support,
                                           cfg.inner_lr, cfg.inner_steps, cfg.first_order);
            Tensor preds = forward(state.model, adapted, query.x, emb_ptr);
            work[i].query_loss = task_loss(state.model, preds, query.y);
            work[i].metric = task_metric(task.kind, preds.values(), query.y.values());
        });
        encodes = state.uses_encoder() ? static_cast<std::int64_t>(batch.size()) : 0;

        Tensor total = work[0].query_loss;
        for (std::size_t i = 1; i < work.size(); ++i) total = add(total, work[i].query_loss);
        stats.total_loss = total.item();

        stats.learner_grad = grad(total, state.learner, {.allow_unused = true});
        if (train_encoder)
            stats.encoder_grad = grad(total, state.encoder_params, {.allow_unused = true});
    } catch (const NonFiniteError& e) {
        state.events.push_back("epoch " + std::to_string(state.epoch) + ": outer step skipped: " +
                               e.what());
        stats.skipped = true;
        return stats;
    }

    state.encode_calls += encodes;
    for (std::size_t i = 0; i < batch.size(); ++i)
        stats.task_metrics.emplace(batch[i]->id, work[i].metric);

    // learner and encoder run separate optimizers; clip each set on its own so
    // the encoder's gradient scale never changes the learner update
    stats.grad_norm = clip_global_norm({&stats.learner_grad}, cfg.clip_norm);
    if (train_encoder) clip_global_norm({&stats.encoder_grad}, cfg.clip_norm);

    state.adam_learner.step(state.learner, stats.learner_grad, stats.lr);
    if (train_encoder) state.adam_encoder.step(state.encoder_params, stats.encoder_grad, stats.lr);
    return stats;
}

namespace {

// post-adaptation query loss on the full query half, deterministic (no
// dropout). Loss rather than AUC/RMSE so checkpoint selection keeps a
// usable ordering even when the task metric saturates.
double validation_task_metric(const MetaState& state, const Task& task) {
    const MetaConfig& cfg = state.config;
    std::uint64_t uid = task_uid(task.id);
    std::uint64_t e = static_cast<std::uint64_t>(state.epoch);
    SplitRows split = split_support_query(task, Rng::derive(cfg.seed, {rng_tag::split, e, uid}));
    Batch support =
        draw_batch(task, split.support, cfg, Rng::derive(cfg.seed, {rng_tag::eval, e, uid}));

    TaskEmbedding embedding;
    const TaskEmbedding* emb_ptr = nullptr;
    if (state.uses_encoder()) {
        embedding = encode(task.info, *state.encoder, state.encoder_params.detached());
        emb_ptr = &embedding;
    }
    ParamSet adapted = inner_adapt(state.model, state.learner, emb_ptr, support, cfg.inner_lr,
                                   cfg.inner_steps, /*first_order=*/true);
    Batch query = rows_to_batch(task, split.query);
    Tensor preds = forward(state.model, adapted, query.x, emb_ptr);
    return task_loss(state.model, preds, query.y).item();
}

} // namespace

MetaState meta_train(const MetaConfig& cfg, const ModelSpec& model, const TaskBundle& bundle) {
    cfg.validate();
    if (bundle.tasks.size() < 2) throw ConfigError("meta_train: need at least 2 tasks");
    TaskKind kind = bundle.tasks.front().kind;
    for (const Task& t : bundle.tasks) {
        if (t.kind != kind) throw ConfigError("meta_train: bundle mixes task kinds");
        if (t.kind == TaskKind::classification &&
            (t.positive_rows().size() < 2 || t.negative_rows().size() < 2))
            throw ConfigError("meta_train: task '" + t.id +
                              "' needs at least 2 rows per class for support/query splitting");
        if (t.row_width() != model.row_width())
            throw ConfigError("meta_train: task '" + t.id + "' row width " +
                              std::to_string(t.row_width()) + " does not match the model");
    }

    MetaState state = init_meta_state(cfg, model, kind);
    if (state.encoder) {
        state.encoder->input_dim = bundle.info_dim;
        state.encoder_params = init_encoder_params(*state.encoder, Rng::derive(cfg.seed, {rng_tag::init, 2}));
        state.adam_encoder = AdamState(state.encoder_params);
    }

    // validation holdout: min(ceil(fraction*N), cap), never meta-trained
    std::size_t n = bundle.tasks.size();
    std::size_t val_count = std::min<std::size_t>(
        static_cast<std::size_t>(std::ceil(cfg.validation_fraction * static_cast<double>(n))),
        static_cast<std::size_t>(cfg.max_validation_tasks));
    Rng val_rng(Rng::derive(cfg.seed, {rng_tag::validation}));
    auto val_perm = val_rng.permutation(n);
    std::vector<const Task*> val_tasks, train_tasks;
    for (std::size_t i = 0; i < n; ++i) {
        const Task* t = &bundle.tasks[val_perm[i]];
        (i < val_count ? val_tasks : train_tasks).push_back(t);
    }
    for (const Task* t : val_tasks) state.validation_ids.push_back(t->id);
    if (train_tasks.empty()) throw ConfigError("meta_train: validation holdout consumed every task");

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        std::vector<const Task*> active;
        if (state.tracker) {
            for (const Task* t : train_tasks)
                if (!state.tracker->is_forgotten(t->id)) active.push_back(t);
        } else {
            active = train_tasks;
        }
        if (active.empty()) {
            state.events.push_back("epoch " + std::to_string(epoch) +
                                   ": every training task forgotten; stopping");
            break;
        }
        if (state.tracker) state.tracker->set_epoch(epoch);

        Rng shuffle_rng(Rng::derive(cfg.seed, {rng_tag::shuffle, static_cast<std::uint64_t>(epoch)}));
        auto perm = shuffle_rng.permutation(active.size());

        EpochLogRow row;
        row.epoch = epoch;
        row.active_tasks = static_cast<int>(active.size());
        double metric_sum = 0;
        int metric_count = 0;

        for (std::size_t start = 0; start < active.size();
             start += static_cast<std::size_t>(cfg.meta_batch_size)) {
            std::size_t stop = std::min(active.size(), start + static_cast<std::size_t>(cfg.meta_batch_size));
            std::vector<const Task*> batch;
            for (std::size_t i = start; i < stop; ++i) batch.push_back(active[perm[i]]);
            for (const Task* t : batch) state.train_audit.emplace_back(epoch, t->id);

            OuterStats stats = outer_step(state, batch);
            row.lr = stats.lr;
            if (stats.skipped) {
                ++row.skipped_steps;
                continue;
            }
            for (const Task* t : batch) {
                double m = stats.task_metrics.at(t->id);
                metric_sum += m;
                ++metric_count;
                if (state.tracker) state.tracker->record_and_prune(t->id, m);
            }
        }
        row.train_metric = metric_count > 0 ? metric_sum / metric_count : 0.0;

        if (!val_tasks.empty()) {
            double vsum = 0;
            for (const Task* t : val_tasks) vsum += validation_task_metric(state, *t);
            row.val_metric = vsum / static_cast<double>(val_tasks.size());
            // validation is a loss: lower is better; ties go to the latest
            // epoch so continued training is preferred
            bool better = !state.has_best || row.val_metric <= state.best_metric;
            if (better) {
                state.best_metric = row.val_metric;
                state.best_epoch = epoch;
                state.best_learner = state.learner.detached();
                if (state.encoder) state.best_encoder = state.encoder_params.detached();
                state.has_best = true;
            }
        }
        row.forgotten = state.tracker ? state.tracker->forgotten_count() : 0;
        state.curve.push_back(row);
    }
    state.epoch = cfg.epochs;
    return state;
}

ParamSet finetune(const MetaState& state, const Task& task, std::span<const std::int64_t> rows,
                  int steps, std::uint64_t seed) {
    const MetaConfig& cfg = state.config;
    if (task.kind == TaskKind::classification) {
        bool has_pos = false, has_neg = false;
        for (std::int64_t r : rows) {
            (task.labels[static_cast<std::size_t>(r)] != 0.0 ? has_pos : has_neg) = true;
        }
        if (steps > 0 && (!has_pos || !has_neg))
            throw Error("finetune: task '" + task.id +
                        "' is missing a class in its fine-tuning rows; evaluate it with "
                        "zero_shot_eval or reduce the batch composition");
    }

    TaskEmbedding embedding;
    const TaskEmbedding* emb_ptr = nullptr;
    if (state.uses_encoder()) {
        embedding = state.task_embedding(task.info); // computed once, frozen
        emb_ptr = &embedding;
    }
    ParamSet params = state.checkpoint_learner().as_variables();
    for (int s = 0; s < steps; ++s) {
        Batch batch = draw_batch(task, rows, cfg,
                                 Rng::derive(seed, {rng_tag::finetune, static_cast<std::uint64_t>(s)}));
        Tensor preds = forward(state.model, params, batch.x, emb_ptr);
        Tensor loss = task_loss(state.model, preds, batch.y);
        ParamSet gs = grad(loss, params, {.allow_unused = true});
        params = sgd_step(params, gs, cfg.inner_lr);
    }
    return params;
}

std::vector<double> predict_scores(const ModelSpec& spec, const ParamSet& params,
                                   const TaskEmbedding* embedding, const Task& task,
                                   std::span<const std::int64_t> rows) {
    Batch batch = rows_to_batch(task, rows);
    return forward(spec, params, batch.x, embedding).values();
}

double zero_shot_eval(const MetaState& state, const Task& task, std::span<const std::int64_t> rows) {
    if (rows.empty()) throw Error("zero_shot_eval: no evaluation rows");
    TaskEmbedding embedding;
    const TaskEmbedding* emb_ptr = nullptr;
    if (state.uses_encoder()) {
        embedding = state.task_embedding(task.info);
        emb_ptr = &embedding;
    }
    std::vector<double> scores =
        predict_scores(state.model, state.checkpoint_learner(), emb_ptr, task, rows);
    Batch batch = rows_to_batch(task, rows);
    return task_metric(task.kind, scores, batch.y.values());
}

} // namespace timl
