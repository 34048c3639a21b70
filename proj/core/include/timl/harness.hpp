// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "timl/metatrain.hpp"
#include "timl/metrics.hpp"
#include "timl/synth.hpp"
#include "timl/tasks.hpp"

namespace timl {

/// Flat key-value experiment configuration: one `key = value` per line,
/// '#' comments, order preserved.
class KvConfig {
public:
    static KvConfig load(const std::string& path);
    static KvConfig from_string(const std::string& text);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::string dump() const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

std::string sha1_hex(const std::string& data);

/// harness-level baseline modes on top of the two trainer modes
enum class ExperimentMode { timl, maml, pretrain, scratch };
ExperimentMode experiment_mode_from_name(const std::string& name);
const char* experiment_mode_name(ExperimentMode mode);

struct TaskMetricRow {
    int repeat = 0;
    std::uint64_t seed = 0;
    std::string task_id;
    std::string kind;
    std::string metric;
    double value = 0;
    bool zero_shot = false;
    std::string tag; // first task tag, if any
};

/// Everything a run produces; aggregates are recomputable from per_task.
struct RunRecord {
    std::string run_name;
    std::string results_dir;
    std::vector<std::pair<std::string, std::string>> config_snapshot;
    std::vector<std::uint64_t> seeds;
    std::vector<TaskMetricRow> per_task;
    std::map<std::string, MeanStderr> aggregate; // over per-repeat means
    double wall_clock_s = 0;
    std::string created_at;
    std::string artifact_hash; // SHA-1 over the stable content
};

/// Hash over everything except wall clock, timestamps and directory paths;
/// two runs of the same config must produce the same fingerprint.
std::string stable_fingerprint(const RunRecord& record);

std::map<std::string, MeanStderr> aggregate_from_rows(const std::vector<TaskMetricRow>& rows);

void write_run_record(const RunRecord& record, const std::string& dir);
RunRecord read_run_record(const std::string& dir);

/// Executes {load/generate bundle -> train per mode -> finetune/eval each
/// held-out task -> aggregate over repeats} and writes the results directory
/// (record.json, per_task.csv, curves.csv, forgetfulness.csv, config
/// snapshot). Subset-size sweeps emit one record per size.
std::vector<RunRecord> run_experiment(const std::string& config_path);
std::vector<RunRecord> run_experiment(const KvConfig& config);

/// Recomputes aggregates from the persisted per-task CSV, verifies them
/// against record.json and renders a table. Throws on mismatch.
std::string report_results(const std::string& dir);

// pieces reused by the CLI
MetaConfig meta_config_from_kv(const KvConfig& kv, ExperimentMode mode);
ModelSpec model_spec_from_kv(const KvConfig& kv, const TaskBundle& bundle);
TaskBundle bundle_from_kv(const KvConfig& kv);

/// Supervised pre-training on the union of the training tasks' rows
/// (crop-pre-training baseline); returns the best-validation parameters.
ParamSet pretrain_supervised(const MetaConfig& cfg, const ModelSpec& model,
                             const std::vector<const Task*>& train_tasks,
                             const std::vector<const Task*>& val_tasks);

} // namespace timl
