// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "timl/autodiff.hpp"
#include "timl/encoder.hpp"
#include "timl/forget.hpp"
#include "timl/nn.hpp"
#include "timl/optim.hpp"
#include "timl/tasks.hpp"

namespace timl {

/// timl: learner plus task encoder, FiLM modulation from task information.
/// maml: learner only, no modulation (the no-task-information baseline).
enum class TrainerMode { timl, maml };

const char* trainer_mode_name(TrainerMode mode);
TrainerMode trainer_mode_from_name(const std::string& name);

struct MetaConfig {
    TrainerMode mode = TrainerMode::timl;
    double inner_lr = 1e-4;
    int inner_steps = 1;
    double outer_lr = 1e-4;
    double outer_lr_min = 1e-5;
    int epochs = 1000;
    int meta_batch_size = 8;
    bool first_order = false;
    /// Encoder parameters are excluded from outer updates; with zero-init
    /// heads this makes the whole pipeline numerically identical to maml mode.
    bool freeze_encoder = false;
    std::uint64_t seed = 0;
    double validation_fraction = 0.10;
    int max_validation_tasks = 50;
    double clip_norm = 10.0;
    int batch_pos = 10;         // classification: positives per batch
    int batch_neg = 10;         // classification: negatives per batch
    int batch_regression = 10;  // regression batch size
    ForgetConfig forget{.enabled = false, .window = 20, .auc_threshold = 0.95, .rmse_threshold = 4.0};
    // task encoder structure
    std::int64_t encoder_trunk_width = 64;
    int encoder_trunk_blocks = 2;
    std::int64_t encoder_norm_groups = 4;
    double encoder_dropout = 0.1;
    bool encoder_zero_init_heads = true;
    int threads = 1;

    void validate() const;
};

struct EpochLogRow {
    int epoch = 0;
    double lr = 0;
    double train_metric = 0; // mean post-adaptation query metric over trained tasks
    double val_metric = 0;   // mean post-adaptation query loss over validation tasks (lower better)
    int active_tasks = 0;
    int skipped_steps = 0;
    std::size_t forgotten = 0;
};

struct MetaState {
    MetaConfig config;
    ModelSpec model;
    std::optional<EncoderSpec> encoder;
    ParamSet learner;        // current
    ParamSet encoder_params; // current (empty in maml mode)
    AdamState adam_learner;
    AdamState adam_encoder;
    int epoch = 0;

    // best-validation checkpoint
    ParamSet best_learner;
    ParamSet best_encoder;
    double best_metric = 0;
    int best_epoch = -1;
    bool has_best = false;

    std::vector<std::string> validation_ids;
    std::optional<MemorizationTracker> tracker;
    std::vector<EpochLogRow> curve;
    std::vector<std::pair<int, std::string>> train_audit; // (epoch, task id) per trained task
    std::vector<std::string> events;
    std::int64_t encode_calls = 0;

    /// Parameters to fine-tune/evaluate from: the best checkpoint when one
    /// exists, the current parameters otherwise.
    const ParamSet& checkpoint_learner() const { return has_best ? best_learner : learner; }
    const ParamSet& checkpoint_encoder() const { return has_best ? best_encoder : encoder_params; }

    bool uses_encoder() const { return config.mode == TrainerMode::timl; }
    /// Embedding for a task from the checkpointed encoder (identity in maml mode).
    TaskEmbedding task_embedding(const TaskInfo& info) const;
};

MetaState init_meta_state(const MetaConfig& cfg, const ModelSpec& model, TaskKind kind);

/// theta' = theta - lr * grad(support loss) applied `steps` times with the
/// embedding held fixed. With first_order=false the result stays connected to
/// `learner` for double backpropagation; with first_order=true the per-step
/// gradients are detached (FOMAML) but the arithmetic is identical.
ParamSet inner_adapt(const ModelSpec& spec, const ParamSet& learner, const TaskEmbedding* embedding,
                     const Batch& support, double lr, int steps, bool first_order);

struct OuterStats {
    bool skipped = false;
    double total_loss = 0;
    double grad_norm = 0; // joint learner+encoder norm before clipping
    double lr = 0;
    std::map<std::string, double> task_metrics; // post-adaptation query metric by task id
    ParamSet learner_grad;                      // outer gradients as applied (post-clip)
    ParamSet encoder_grad;
};

/// One meta-update: inner-adapt every task of the batch from read-only
/// parameter snapshots, sum the query losses in task order, apply one Adam
/// step to the learner and (timl mode, unfrozen) one to the encoder.
/// A non-finite loss skips the step and logs an event.
OuterStats outer_step(MetaState& state, std::span<const Task* const> batch);

/// Full loop: splits off validation tasks (never meta-trained), iterates the
/// unforgotten tasks in seeded shuffled order each epoch, checkpoints the
/// best post-adaptation validation metric, stops early only when every
/// training task has been forgotten.
MetaState meta_train(const MetaConfig& cfg, const ModelSpec& model, const TaskBundle& bundle);

/// Plain gradient-descent fine-tuning from the checkpoint, embedding computed
/// once from the task's info and frozen. Classification tasks draw balanced
/// batch_pos+batch_neg batches; regression tasks draw batch_regression rows.
/// A classification task with no positive rows is an error that directs the
/// caller to zero_shot_eval.
ParamSet finetune(const MetaState& state, const Task& task, std::span<const std::int64_t> rows,
                  int steps, std::uint64_t seed);

std::vector<double> predict_scores(const ModelSpec& spec, const ParamSet& params,
                                   const TaskEmbedding* embedding, const Task& task,
                                   std::span<const std::int64_t> rows);

/// Post-adaptation metric for the task kind: AUC ROC on logits for
/// classification, RMSE for regression.
double task_metric(TaskKind kind, std::span<const double> scores, std::span<const double> labels);

/// Metric of the checkpointed meta-model modulated by the task's embedding,
/// with no gradient steps.
double zero_shot_eval(const MetaState& state, const Task& task, std::span<const std::int64_t> rows);

} // namespace timl
