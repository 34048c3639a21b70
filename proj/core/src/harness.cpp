// SPDX-License-Identifier: Apache-2.0
#include "timl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>
#include <set>
#include <sstream>

#include <json.hpp>

#include "timl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace timl {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

} // namespace

// -- KvConfig ---------------------------------------------------------------

KvConfig KvConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
    KvConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

bool KvConfig::has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return true;
    return false;
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    return fallback;
}

std::string KvConfig::require(const std::string& key) const {
    if (!has(key)) throw ConfigError("config: missing required key '" + key + "'");
    return get(key, "");
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? std::stod(get(key, "")) : fallback;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? std::stoll(get(key, "")) : fallback;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? std::stoull(get(key, "")) : fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<std::int64_t> KvConfig::get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    if (!has(key)) return out;
    std::stringstream ss(get(key, ""));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(std::stoll(cell));
    }
    return out;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
        if (k == key) {
            v = value;
            return;
        }
    entries_.emplace_back(key, value);
}

std::string KvConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

// -- SHA-1 ----------------------------------------------------------------------

std::string sha1_hex(const std::string& data) {
    std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    std::uint64_t ml = static_cast<std::uint64_t>(data.size()) * 8;
    std::string msg = data;
    msg.push_back(static_cast<char>(0x80));
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<char>((ml >> (8 * i)) & 0xff));

    auto rol = [](std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); };
    for (std::size_t chunk = 0; chunk < msg.size(); chunk += 64) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (static_cast<std::uint8_t>(msg[chunk + 4 * i]) << 24) |
                   (static_cast<std::uint8_t>(msg[chunk + 4 * i + 1]) << 16) |
                   (static_cast<std::uint8_t>(msg[chunk + 4 * i + 2]) << 8) |
                   static_cast<std::uint8_t>(msg[chunk + 4 * i + 3]);
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
    }
    char out[41];
    std::snprintf(out, sizeof(out), "%08x%08x%08x%08x%08x", h[0], h[1], h[2], h[3], h[4]);
    return out;
}

// -- run records -------------------------------------------------------------------

ExperimentMode experiment_mode_from_name(const std::string& name) {
    if (name == "timl") return ExperimentMode::timl;
    if (name == "maml") return ExperimentMode::maml;
    if (name == "pretrain") return ExperimentMode::pretrain;
    if (name == "scratch") return ExperimentMode::scratch;
    throw ConfigError("unknown experiment mode '" + name + "'");
}

const char* experiment_mode_name(ExperimentMode mode) {
    switch (mode) {
    case ExperimentMode::timl: return "timl";
    case ExperimentMode::maml: return "maml";
    case ExperimentMode::pretrain: return "pretrain";
    case ExperimentMode::scratch: return "scratch";
    }
    return "?";
}

std::map<std::string, MeanStderr> aggregate_from_rows(const std::vector<TaskMetricRow>& rows) {
    // per-repeat task mean first, then mean +/- stderr across repeats
    std::map<std::string, std::map<int, std::pair<double, int>>> acc;
    for (const TaskMetricRow& r : rows) {
        auto& cell = acc[r.metric][r.repeat];
        cell.first += r.value;
        cell.second += 1;
    }
    std::map<std::string, MeanStderr> out;
    for (const auto& [metric, repeats] : acc) {
        std::vector<double> means;
        for (const auto& [rep, cell] : repeats) means.push_back(cell.first / cell.second);
        out[metric] = mean_stderr(means);
    }
    return out;
}

namespace {

std::string stable_content(const RunRecord& r) {
    std::string s;
    s += "run_name=" + r.run_name + "\n";
    for (const auto& [k, v] : r.config_snapshot) s += k + "=" + v + "\n";
    for (std::uint64_t seed : r.seeds) s += "seed:" + std::to_string(seed) + "\n";
    for (const TaskMetricRow& row : r.per_task)
        s += std::to_string(row.repeat) + "," + std::to_string(row.seed) + "," + row.task_id + "," +
             row.kind + "," + row.metric + "," + fmt17(row.value) + "," +
             (row.zero_shot ? "1" : "0") + "," + row.tag + "\n";
    for (const auto& [metric, ms] : r.aggregate)
        s += metric + ":" + fmt17(ms.mean) + ":" + fmt17(ms.stderr_) + ":" + std::to_string(ms.n) + "\n";
    return s;
}

} // namespace

std::string stable_fingerprint(const RunRecord& record) { return sha1_hex(stable_content(record)); }

void write_run_record(const RunRecord& record, const std::string& dir) {
    fs::create_directories(dir);
    json j;
    j["schema_version"] = 1;
    j["run_name"] = record.run_name;
    j["created_at"] = record.created_at;
    j["wall_clock_s"] = record.wall_clock_s;
    j["artifact_hash"] = record.artifact_hash;
    j["seeds"] = record.seeds;
    json cfg = json::array();
    for (const auto& [k, v] : record.config_snapshot) cfg.push_back({{"key", k}, {"value", v}});
    j["config"] = cfg;
    json agg = json::object();
    for (const auto& [metric, ms] : record.aggregate)
        agg[metric] = {{"mean", ms.mean}, {"stderr", ms.stderr_}, {"n", ms.n}};
    j["aggregate"] = agg;
    std::ofstream rf(fs::path(dir) / "record.json");
    if (!rf) throw IoError("cannot write record.json in " + dir);
    rf << j.dump(2) << '\n';

    std::ofstream csv(fs::path(dir) / "per_task.csv");
    csv << "repeat,seed,task_id,kind,metric,value,zero_shot,tag\n";
    for (const TaskMetricRow& r : record.per_task)
        csv << r.repeat << ',' << r.seed << ',' << r.task_id << ',' << r.kind << ',' << r.metric
            << ',' << fmt17(r.value) << ',' << (r.zero_shot ? 1 : 0) << ',' << r.tag << '\n';

    std::ofstream snap(fs::path(dir) / "config.snapshot");
    for (const auto& [k, v] : record.config_snapshot) snap << k << " = " << v << '\n';
}

RunRecord read_run_record(const std::string& dir) {
    std::ifstream rf(fs::path(dir) / "record.json");
    if (!rf) throw IoError("cannot open " + dir + "/record.json");
    json j;
    rf >> j;
    RunRecord r;
    r.run_name = j.at("run_name").get<std::string>();
    r.results_dir = dir;
    r.created_at = j.at("created_at").get<std::string>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    r.artifact_hash = j.at("artifact_hash").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const json& e : j.at("config"))
        r.config_snapshot.emplace_back(e.at("key").get<std::string>(), e.at("value").get<std::string>());
    for (auto it = j.at("aggregate").begin(); it != j.at("aggregate").end(); ++it) {
        MeanStderr ms;
        ms.mean = it.value().at("mean").get<double>();
        ms.stderr_ = it.value().at("stderr").get<double>();
        ms.n = it.value().at("n").get<std::size_t>();
        r.aggregate[it.key()] = ms;
    }
    std::ifstream csv(fs::path(dir) / "per_task.csv");
    if (!csv) throw IoError("cannot open " + dir + "/per_task.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 7) throw IoError("per_task.csv: malformed row");
        TaskMetricRow row;
        row.repeat = std::stoi(cells[0]);
        row.seed = std::stoull(cells[1]);
        row.task_id = cells[2];
        row.kind = cells[3];
        row.metric = cells[4];
        row.value = std::stod(cells[5]);
        row.zero_shot = cells[6] == "1";
        row.tag = cells.size() > 7 ? cells[7] : "";
        r.per_task.push_back(std::move(row));
    }
    return r;
}

// -- experiment assembly -------------------------------------------------------------

TaskBundle bundle_from_kv(const KvConfig& kv) {
    if (kv.has("bundle")) return load_bundle(kv.require("bundle"));
    SynthSpec spec;
    spec.family = synth_family_from_name(kv.require("synth.family"));
    spec.num_tasks = static_cast<int>(kv.get_int("synth.num_tasks", 100));
    spec.points_per_task = static_cast<int>(kv.get_int("synth.points_per_task", 64));
    spec.metadata_informative = kv.get_bool("synth.informative", true);
    spec.noise_sd = kv.get_double("synth.noise_sd", 0.01);
    spec.seed = kv.get_u64("synth.seed", 0);
    spec.feature_dim = static_cast<int>(kv.get_int("synth.feature_dim", 8));
    spec.separation_target = kv.get_double("synth.separation_target", 0.95);
    spec.easy_ratio = kv.get_double("synth.easy_ratio", 0.9);
    spec.easy_margin = kv.get_double("synth.easy_margin", 1.0);
    spec.hard_margin = kv.get_double("synth.hard_margin", 0.05);
    return generate_bundle(spec);
}

ModelSpec model_spec_from_kv(const KvConfig& kv, const TaskBundle& bundle) {
    ModelSpec spec;
    std::string kind = kv.get("model.kind", "mlp");
    if (kind == "mlp") {
        spec.kind = ModelKind::mlp;
        spec.input_dim = bundle.timesteps > 0 ? bundle.feature_dim * bundle.timesteps
                                              : bundle.feature_dim;
        for (std::int64_t w : kv.get_int_list("model.hidden")) spec.hidden_dims.push_back(w);
        if (spec.hidden_dims.empty() && !kv.has("model.hidden")) spec.hidden_dims = {32, 32};
    } else if (kind == "lstm") {
        spec.kind = ModelKind::lstm;
        spec.input_dim = bundle.feature_dim;
        spec.timesteps = bundle.timesteps > 0 ? bundle.timesteps
                                              : kv.get_int("model.timesteps", 0);
        spec.hidden_size = kv.get_int("model.hidden_size", 32);
        if (spec.timesteps < 1) throw ConfigError("config: lstm model needs timesteps");
    } else {
        throw ConfigError("config: unknown model.kind '" + kind + "'");
    }
    std::string output = kv.get("model.output", "");
    if (output.empty())
        spec.output = bundle.tasks.empty() || bundle.tasks.front().kind == TaskKind::classification
                          ? OutputKind::binary_logit
                          : OutputKind::scalar_regression;
    else if (output == "logit")
        spec.output = OutputKind::binary_logit;
    else if (output == "regression")
        spec.output = OutputKind::scalar_regression;
    else
        throw ConfigError("config: unknown model.output '" + output + "'");
    spec.validate();
    return spec;
}

MetaConfig meta_config_from_kv(const KvConfig& kv, ExperimentMode mode) {
    MetaConfig cfg;
    cfg.mode = mode == ExperimentMode::timl ? TrainerMode::timl : TrainerMode::maml;
    cfg.inner_lr = kv.get_double("inner_lr", cfg.inner_lr);
    cfg.inner_steps = static_cast<int>(kv.get_int("inner_steps", cfg.inner_steps));
    cfg.outer_lr = kv.get_double("outer_lr", cfg.outer_lr);
    cfg.outer_lr_min = kv.get_double("outer_lr_min", cfg.outer_lr_min);
    cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
    cfg.meta_batch_size = static_cast<int>(kv.get_int("meta_batch_size", cfg.meta_batch_size));
    cfg.first_order = kv.get_bool("first_order", cfg.first_order);
    cfg.freeze_encoder = kv.get_bool("freeze_encoder", cfg.freeze_encoder);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.validation_fraction = kv.get_double("validation_fraction", cfg.validation_fraction);
    cfg.max_validation_tasks = static_cast<int>(kv.get_int("max_validation_tasks", cfg.max_validation_tasks));
    cfg.clip_norm = kv.get_double("clip_norm", cfg.clip_norm);
    cfg.batch_pos = static_cast<int>(kv.get_int("batch_pos", cfg.batch_pos));
    cfg.batch_neg = static_cast<int>(kv.get_int("batch_neg", cfg.batch_neg));
    cfg.batch_regression = static_cast<int>(kv.get_int("batch_regression", cfg.batch_regression));
    cfg.forget.enabled = kv.get_bool("forget.enabled", cfg.forget.enabled);
    cfg.forget.window = static_cast<int>(kv.get_int("forget.window", cfg.forget.window));
    cfg.forget.auc_threshold = kv.get_double("forget.auc_threshold", cfg.forget.auc_threshold);
    cfg.forget.rmse_threshold = kv.get_double("forget.rmse_threshold", cfg.forget.rmse_threshold);
    cfg.encoder_trunk_width = kv.get_int("encoder.trunk_width", cfg.encoder_trunk_width);
    cfg.encoder_trunk_blocks = static_cast<int>(kv.get_int("encoder.trunk_blocks", cfg.encoder_trunk_blocks));
    cfg.encoder_norm_groups = kv.get_int("encoder.norm_groups", cfg.encoder_norm_groups);
    cfg.encoder_dropout = kv.get_double("encoder.dropout", cfg.encoder_dropout);
    cfg.encoder_zero_init_heads = kv.get_bool("encoder.zero_init_heads", cfg.encoder_zero_init_heads);
    cfg.threads = static_cast<int>(kv.get_int("threads", cfg.threads));
    return cfg;
}

ParamSet pretrain_supervised(const MetaConfig& cfg, const ModelSpec& model,
                             const std::vector<const Task*>& train_tasks,
                             const std::vector<const Task*>& val_tasks) {
    // pool every row of every training task into one supervised dataset
    auto pool = [&](const std::vector<const Task*>& tasks) {
        Task pooled;
        pooled.id = "pooled";
        pooled.kind = model.output == OutputKind::binary_logit ? TaskKind::classification
                                                               : TaskKind::regression;
        pooled.feature_dim = model.row_width();
        for (const Task* t : tasks) {
            pooled.features.insert(pooled.features.end(), t->features.begin(), t->features.end());
            pooled.labels.insert(pooled.labels.end(), t->labels.begin(), t->labels.end());
        }
        return pooled;
    };
    Task train_pool = pool(train_tasks);
    Task val_pool = pool(val_tasks);

    ParamSet params = init_params(model, Rng::derive(cfg.seed, {rng_tag::init, 1}));
    AdamState adam(params);
    int batch_rows = train_pool.kind == TaskKind::classification ? cfg.batch_pos + cfg.batch_neg
                                                                 : cfg.batch_regression;
    std::int64_t steps_per_epoch = std::max<std::int64_t>(1, train_pool.rows() / batch_rows);

    ParamSet best = params.detached();
    double best_loss = 0;
    bool has_best = false;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cosine_annealed_lr(cfg.outer_lr, cfg.outer_lr_min, epoch, cfg.epochs);
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            std::uint64_t bs = Rng::derive(cfg.seed, {rng_tag::batch, static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(s)});
            Batch batch = train_pool.kind == TaskKind::classification
                              ? sample_balanced_batch(train_pool, cfg.batch_pos, cfg.batch_neg, bs)
                              : sample_uniform_batch(train_pool, cfg.batch_regression, bs);
            ParamSet vars = params; // leaves already require grad
            Tensor loss = task_loss(model, forward(model, vars, batch.x), batch.y);
            ParamSet gs = grad(loss, vars, {.allow_unused = true});
            clip_global_norm({&gs}, cfg.clip_norm);
            adam.step(params, gs, lr);
        }
        if (val_pool.rows() > 0) {
            std::vector<std::int64_t> all(static_cast<std::size_t>(val_pool.rows()));
            std::iota(all.begin(), all.end(), std::int64_t{0});
            Batch vb = rows_to_batch(val_pool, all);
            double vloss = task_loss(model, forward(model, params, vb.x), vb.y).item();
            if (!has_best || vloss < best_loss) {
                best_loss = vloss;
                best = params.detached();
                has_best = true;
            }
        }
    }
    return has_best ? best.as_variables() : params;
}

namespace {

struct EvalPlan {
    std::vector<const Task*> train_tasks;
    std::vector<const Task*> eval_tasks;
};

EvalPlan split_eval_tasks(const TaskBundle& bundle, const KvConfig& kv) {
    EvalPlan plan;
    std::set<std::size_t> eval_idx;
    if (kv.has("eval.per_tag")) {
        std::int64_t per_tag = kv.get_int("eval.per_tag", 0);
        std::map<std::string, std::vector<std::size_t>> by_tag;
        for (std::size_t i = 0; i < bundle.tasks.size(); ++i) {
            const Task& t = bundle.tasks[i];
            by_tag[t.tags.empty() ? "" : t.tags.front()].push_back(i);
        }
        for (const auto& [tag, idx] : by_tag)
            for (std::size_t k = idx.size() - std::min<std::size_t>(idx.size(), static_cast<std::size_t>(per_tag));
                 k < idx.size(); ++k)
                eval_idx.insert(idx[k]);
    } else {
        std::int64_t holdout = kv.get_int("eval.holdout", 0);
        for (std::size_t k = bundle.tasks.size() - std::min<std::size_t>(bundle.tasks.size(),
                                                                         static_cast<std::size_t>(holdout));
             k < bundle.tasks.size(); ++k)
            eval_idx.insert(k);
    }
    for (std::size_t i = 0; i < bundle.tasks.size(); ++i)
        (eval_idx.count(i) ? plan.eval_tasks : plan.train_tasks).push_back(&bundle.tasks[i]);
    return plan;
}

TaskBundle sub_bundle(const TaskBundle& bundle, const std::vector<const Task*>& tasks) {
    TaskBundle out;
    out.name = bundle.name;
    out.feature_dim = bundle.feature_dim;
    out.timesteps = bundle.timesteps;
    out.info_dim = bundle.info_dim;
    out.spatial_info = bundle.spatial_info;
    for (const Task* t : tasks) out.tasks.push_back(*t);
    return out;
}

// shot rows for fine-tuning: balanced for classification, uniform otherwise;
// remaining rows are the evaluation set
struct ShotSplit {
    std::vector<std::int64_t> shot_rows;
    std::vector<std::int64_t> eval_rows;
    bool zero_shot = false;
};

ShotSplit plan_shots(const Task& task, std::int64_t shots, std::uint64_t seed) {
    ShotSplit out;
    std::vector<std::int64_t> all(static_cast<std::size_t>(task.rows()));
    std::iota(all.begin(), all.end(), std::int64_t{0});
    if (shots <= 0 || shots >= task.rows()) {
        out.eval_rows = all;
        out.zero_shot = true;
        return out;
    }
    std::set<std::int64_t> shot_set;
    if (task.kind == TaskKind::classification) {
        auto pos = task.positive_rows();
        auto neg = task.negative_rows();
        if (pos.empty() || neg.empty()) {
            out.eval_rows = all;
            out.zero_shot = true;
            return out;
        }
        Rng rng(Rng::derive(seed, {rng_tag::split, 0xe7a1}));
        auto take = [&](const std::vector<std::int64_t>& pool, std::int64_t k) {
            auto perm = rng.permutation(pool.size());
            for (std::int64_t i = 0; i < std::min<std::int64_t>(k, static_cast<std::int64_t>(pool.size())); ++i)
                shot_set.insert(pool[perm[static_cast<std::size_t>(i)]]);
        };
        take(pos, shots / 2);
        take(neg, shots - shots / 2);
    } else {
        Rng rng(Rng::derive(seed, {rng_tag::split, 0xe7a1}));
        auto perm = rng.permutation(all.size());
        for (std::int64_t i = 0; i < shots; ++i)
            shot_set.insert(all[perm[static_cast<std::size_t>(i)]]);
    }
    for (std::int64_t r : all)
        (shot_set.count(r) ? out.shot_rows : out.eval_rows).push_back(r);
    // degenerate split: too few distinct rows per class
    if (out.shot_rows.empty() || out.eval_rows.empty()) {
        out.shot_rows.clear();
        out.eval_rows = all;
        out.zero_shot = true;
    }
    return out;
}

void append_eval_metrics(std::vector<TaskMetricRow>& rows, const MetaState& state, const Task& task,
                         const ParamSet& params, const std::vector<std::int64_t>& eval_rows,
                         int repeat, std::uint64_t seed, bool zero_shot) {
    TaskEmbedding embedding;
    const TaskEmbedding* emb_ptr = nullptr;
    if (state.uses_encoder()) {
        embedding = state.task_embedding(task.info);
        emb_ptr = &embedding;
    }
    std::vector<double> scores = predict_scores(state.model, params, emb_ptr, task, eval_rows);
    Batch eval_batch = rows_to_batch(task, eval_rows);
    const auto& labels = eval_batch.y.values();

    TaskMetricRow base;
    base.repeat = repeat;
    base.seed = seed;
    base.task_id = task.id;
    base.kind = task_kind_name(task.kind);
    base.zero_shot = zero_shot;
    base.tag = task.tags.empty() ? "" : task.tags.front();

    if (task.kind == TaskKind::classification) {
        TaskMetricRow auc = base;
        auc.metric = "auc_roc";
        auc.value = auc_roc(scores, labels);
        rows.push_back(auc);
        std::vector<double> probs(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i)
            probs[i] = 1.0 / (1.0 + std::exp(-scores[i]));
        TaskMetricRow f1 = base;
        f1.metric = "f1";
        f1.value = f1_at_half(probs, labels);
        rows.push_back(f1);
    } else {
        TaskMetricRow r1 = base;
        r1.metric = "rmse";
        r1.value = rmse(scores, labels);
        rows.push_back(r1);
        TaskMetricRow r2 = base;
        r2.metric = "mse";
        r2.value = mse(scores, labels);
        rows.push_back(r2);
    }
}

RunRecord run_single(const KvConfig& kv, const TaskBundle& bundle, const EvalPlan& plan,
                     const std::string& run_dir, const std::string& run_name, std::int64_t shots) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentMode mode = experiment_mode_from_name(kv.get("mode", "timl"));
    ModelSpec model = model_spec_from_kv(kv, bundle);
    int repeats = static_cast<int>(kv.get_int("repeats", 1));
    std::uint64_t base_seed = kv.get_u64("seed", 0);
    int eval_steps = static_cast<int>(kv.get_int("eval.steps", 10));
    bool force_zero_shot = kv.get_bool("eval.zero_shot", false);

    RunRecord record;
    record.run_name = run_name;
    record.results_dir = run_dir;
    for (const auto& [k, v] : kv.entries()) record.config_snapshot.emplace_back(k, v);
    if (shots >= 0) record.config_snapshot.emplace_back("eval.shots.effective", std::to_string(shots));

    fs::create_directories(run_dir);
    TaskBundle train_bundle = sub_bundle(bundle, plan.train_tasks);

    // repeats are independent jobs; results land in per-repeat slots and the
    // reduce below runs serially in seed order
    struct RepeatOutcome {
        std::vector<TaskMetricRow> rows;
        std::string curve_lines;
        std::string forget_lines;
    };
    std::vector<RepeatOutcome> outcomes(static_cast<std::size_t>(repeats));

    auto run_repeat = [&](int rep) {
        RepeatOutcome& out = outcomes[static_cast<std::size_t>(rep)];
        std::uint64_t seed = base_seed + static_cast<std::uint64_t>(rep);

        MetaState state;
        if (mode == ExperimentMode::timl || mode == ExperimentMode::maml) {
            MetaConfig mc = meta_config_from_kv(kv, mode);
            mc.seed = seed;
            state = meta_train(mc, model, train_bundle);
            std::ostringstream cs, fsr;
            for (const EpochLogRow& row : state.curve)
                cs << rep << ',' << row.epoch << ',' << fmt17(row.lr) << ','
                   << fmt17(row.train_metric) << ',' << fmt17(row.val_metric) << ','
                   << row.active_tasks << ',' << row.skipped_steps << ',' << row.forgotten << '\n';
            if (state.tracker)
                for (const auto& lrow : state.tracker->log())
                    fsr << rep << ',' << lrow.epoch << ',' << lrow.task_id << ','
                        << fmt17(lrow.metric) << ',' << (lrow.forgotten ? 1 : 0) << '\n';
            out.curve_lines = cs.str();
            out.forget_lines = fsr.str();
        } else {
            MetaConfig mc = meta_config_from_kv(kv, ExperimentMode::maml);
            mc.seed = seed;
            mc.epochs = static_cast<int>(kv.get_int("pretrain.epochs", mc.epochs));
            state = init_meta_state(mc, model, bundle.tasks.front().kind);
            if (mode == ExperimentMode::pretrain) {
                // hold out the trainer's validation fraction for checkpointing
                std::size_t n = train_bundle.tasks.size();
                std::size_t val_count = std::min<std::size_t>(
                    static_cast<std::size_t>(std::ceil(mc.validation_fraction * static_cast<double>(n))),
                    static_cast<std::size_t>(mc.max_validation_tasks));
                Rng val_rng(Rng::derive(mc.seed, {rng_tag::validation}));
                auto perm = val_rng.permutation(n);
                std::vector<const Task*> ptrain, pval;
                for (std::size_t i = 0; i < n; ++i)
                    (i < val_count ? pval : ptrain).push_back(&train_bundle.tasks[perm[i]]);
                state.learner = pretrain_supervised(mc, model, ptrain, pval);
            }
        }

        for (const Task* task : plan.eval_tasks) {
            std::uint64_t id_hash = 1469598103934665603ULL;
            for (unsigned char c : task->id) {
                id_hash ^= c;
                id_hash *= 1099511628211ULL;
            }
            ShotSplit split;
            if (force_zero_shot) {
                split.zero_shot = true;
                split.eval_rows.resize(static_cast<std::size_t>(task->rows()));
                std::iota(split.eval_rows.begin(), split.eval_rows.end(), std::int64_t{0});
            } else {
                split = plan_shots(*task, shots, Rng::derive(seed, {rng_tag::eval, id_hash}));
            }
            if (split.zero_shot || eval_steps == 0) {
                append_eval_metrics(out.rows, state, *task, state.checkpoint_learner(),
                                    split.eval_rows, rep, seed, true);
            } else {
                ParamSet tuned = finetune(state, *task, split.shot_rows, eval_steps, seed);
                append_eval_metrics(out.rows, state, *task, tuned, split.eval_rows, rep, seed, false);
            }
        }
    };

    int repeat_jobs = static_cast<int>(kv.get_int("repeat_jobs", 1));
    if (repeat_jobs <= 1 || repeats <= 1) {
        for (int rep = 0; rep < repeats; ++rep) run_repeat(rep);
    } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(repeats));
        auto worker = [&](int tid, int stride) {
            for (int rep = tid; rep < repeats; rep += stride) {
                try {
                    run_repeat(rep);
                } catch (...) {
                    errors[static_cast<std::size_t>(rep)] = std::current_exception();
                }
            }
        };
        int k = std::min(repeat_jobs, repeats);
        std::vector<std::thread> pool;
        for (int t = 1; t < k; ++t) pool.emplace_back(worker, t, k);
        worker(0, k);
        for (auto& th : pool) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::ofstream curves(fs::path(run_dir) / "curves.csv");
    curves << "repeat,epoch,lr,train_metric,val_metric,active_tasks,skipped_steps,forgotten\n";
    std::ofstream forget_log(fs::path(run_dir) / "forgetfulness.csv");
    forget_log << "repeat,epoch,task_id,metric,forgotten_flag\n";
    for (int rep = 0; rep < repeats; ++rep) {
        record.seeds.push_back(base_seed + static_cast<std::uint64_t>(rep));
        const RepeatOutcome& out = outcomes[static_cast<std::size_t>(rep)];
        record.per_task.insert(record.per_task.end(), out.rows.begin(), out.rows.end());
        curves << out.curve_lines;
        forget_log << out.forget_lines;
    }

    record.aggregate = aggregate_from_rows(record.per_task);
    record.created_at = now_iso8601();
    record.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record.artifact_hash = sha1_hex(stable_content(record));
    write_run_record(record, run_dir);
    return record;
}

} // namespace

std::vector<RunRecord> run_experiment(const KvConfig& kv) {
    TaskBundle bundle = bundle_from_kv(kv);
    EvalPlan plan = split_eval_tasks(bundle, kv);
    if (plan.eval_tasks.empty())
        throw ConfigError("config: no held-out evaluation tasks (set eval.holdout or eval.per_tag)");
    if (plan.train_tasks.size() < 2)
        throw ConfigError("config: fewer than 2 training tasks after the evaluation holdout");

    std::string run_name = kv.get("run_name", "run_" + now_iso8601());
    std::string base_dir = kv.get("results_dir", "runs");
    fs::path run_root = fs::path(base_dir) / run_name;

    if (!kv.has("bundle") && kv.get_bool("save_bundle", false))
        save_bundle(bundle, (run_root / "bundle").string());

    std::vector<RunRecord> records;
    std::vector<std::int64_t> sweep = kv.get_int_list("sweep.sizes");
    if (sweep.empty()) {
        records.push_back(run_single(kv, bundle, plan, run_root.string(), run_name,
                                     kv.get_int("eval.shots", 10)));
    } else {
        // one record per training-subset size, balanced per class
        for (std::int64_t size : sweep) {
            std::string sub_name = run_name + "/size_" + std::to_string(size);
            records.push_back(run_single(kv, bundle, plan, (run_root / ("size_" + std::to_string(size))).string(),
                                         sub_name, size));
        }
    }
    return records;
}

std::vector<RunRecord> run_experiment(const std::string& config_path) {
    return run_experiment(KvConfig::load(config_path));
}

std::string report_results(const std::string& dir) {
    RunRecord record = read_run_record(dir);
    std::map<std::string, MeanStderr> recomputed = aggregate_from_rows(record.per_task);
    std::ostringstream out;
    out << "run: " << record.run_name << "\n";
    out << "seeds: " << record.seeds.size() << ", per-task rows: " << record.per_task.size() << "\n";
    for (const auto& [metric, ms] : record.aggregate) {
        auto it = recomputed.find(metric);
        if (it == recomputed.end())
            throw Error("report: metric '" + metric + "' missing from per-task rows");
        if (std::fabs(it->second.mean - ms.mean) > 1e-12 ||
            std::fabs(it->second.stderr_ - ms.stderr_) > 1e-12)
            throw Error("report: aggregate for '" + metric +
                        "' is not recomputable from per_task.csv");
        char line[128];
        std::snprintf(line, sizeof(line), "  %-10s %.4f +/- %.4f  (n=%zu)\n", metric.c_str(),
                      ms.mean, ms.stderr_, ms.n);
        out << line;
    }
    out << "artifact_hash: " << record.artifact_hash << "\n";
    return out.str();
}

} // namespace timl
