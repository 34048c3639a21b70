// SPDX-License-Identifier: Apache-2.0
#include "timl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace timl {

namespace {

// on-disk byte order is fixed little-endian
void to_little(std::vector<double>& values) {
    if constexpr (std::endian::native == std::endian::big) {
        for (double& v : values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            bits = __builtin_bswap64(bits);
            std::memcpy(&v, &bits, 8);
        }
    }
}

void write_doubles(const fs::path& path, std::vector<double> values) {
    to_little(values);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_doubles(const fs::path& path, std::size_t count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<double> values(count);
    f.read(reinterpret_cast<char*>(values.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != count * sizeof(double))
        throw IoError(path.string() + ": truncated");
    to_little(values); // little <-> native swap is its own inverse
    return values;
}

json param_index(const ParamSet& params) {
    json idx = json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : params) {
        idx.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
        offset += t.numel();
    }
    return idx;
}

std::vector<double> flatten(const ParamSet& params) {
    std::vector<double> out;
    for (const auto& [name, t] : params) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

ParamSet unflatten(const json& index, const std::vector<double>& flat) {
    std::map<std::string, Tensor> values;
    for (const json& entry : index) {
        Shape shape = entry.at("shape").get<Shape>();
        std::int64_t offset = entry.at("offset").get<std::int64_t>();
        std::int64_t count = entry.at("count").get<std::int64_t>();
        std::vector<double> data(flat.begin() + offset, flat.begin() + offset + count);
        values.emplace(entry.at("name").get<std::string>(), tensor(shape, std::move(data), true));
    }
    return ParamSet(std::move(values));
}

json model_to_json(const ModelSpec& m) {
    return {{"kind", m.kind == ModelKind::mlp ? "mlp" : "lstm"},
            {"input_dim", m.input_dim},
            {"hidden_dims", m.hidden_dims},
            {"hidden_size", m.hidden_size},
            {"timesteps", m.timesteps},
            {"output", m.output == OutputKind::binary_logit ? "binary_logit" : "scalar_regression"}};
}

ModelSpec model_from_json(const json& j) {
    ModelSpec m;
    m.kind = j.at("kind").get<std::string>() == "mlp" ? ModelKind::mlp : ModelKind::lstm;
    m.input_dim = j.at("input_dim").get<std::int64_t>();
    m.hidden_dims = j.at("hidden_dims").get<std::vector<std::int64_t>>();
    m.hidden_size = j.at("hidden_size").get<std::int64_t>();
    m.timesteps = j.at("timesteps").get<std::int64_t>();
    m.output = j.at("output").get<std::string>() == "binary_logit" ? OutputKind::binary_logit
                                                                   : OutputKind::scalar_regression;
    return m;
}

json encoder_to_json(const EncoderSpec& e) {
    json heads = json::array();
    for (const EncoderHead& h : e.heads) heads.push_back({{"point", h.point}, {"width", h.width}});
    return {{"input_dim", e.input_dim},       {"trunk_width", e.trunk_width},
            {"trunk_blocks", e.trunk_blocks}, {"norm_groups", e.norm_groups},
            {"dropout", e.dropout},           {"zero_init_heads", e.zero_init_heads},
            {"heads", heads}};
}

EncoderSpec encoder_from_json(const json& j) {
    EncoderSpec e;
    e.input_dim = j.at("input_dim").get<std::int64_t>();
    e.trunk_width = j.at("trunk_width").get<std::int64_t>();
    e.trunk_blocks = j.at("trunk_blocks").get<int>();
    e.norm_groups = j.at("norm_groups").get<std::int64_t>();
    e.dropout = j.at("dropout").get<double>();
    e.zero_init_heads = j.at("zero_init_heads").get<bool>();
    for (const json& h : j.at("heads"))
        e.heads.push_back({h.at("point").get<std::string>(), h.at("width").get<std::int64_t>()});
    return e;
}

json config_to_json(const MetaConfig& c) {
    return {{"mode", trainer_mode_name(c.mode)},
            {"inner_lr", c.inner_lr},
            {"inner_steps", c.inner_steps},
            {"outer_lr", c.outer_lr},
            {"outer_lr_min", c.outer_lr_min},
            {"epochs", c.epochs},
            {"meta_batch_size", c.meta_batch_size},
            {"first_order", c.first_order},
            {"freeze_encoder", c.freeze_encoder},
            {"seed", c.seed},
            {"validation_fraction", c.validation_fraction},
            {"max_validation_tasks", c.max_validation_tasks},
            {"clip_norm", c.clip_norm},
            {"batch_pos", c.batch_pos},
            {"batch_neg", c.batch_neg},
            {"batch_regression", c.batch_regression},
            {"forget",
             {{"enabled", c.forget.enabled},
              {"window", c.forget.window},
              {"auc_threshold", c.forget.auc_threshold},
              {"rmse_threshold", c.forget.rmse_threshold}}},
            {"encoder_trunk_width", c.encoder_trunk_width},
            {"encoder_trunk_blocks", c.encoder_trunk_blocks},
            {"encoder_norm_groups", c.encoder_norm_groups},
            {"encoder_dropout", c.encoder_dropout},
            {"encoder_zero_init_heads", c.encoder_zero_init_heads},
            {"threads", c.threads}};
}

MetaConfig config_from_json(const json& j) {
    MetaConfig c;
    c.mode = trainer_mode_from_name(j.at("mode").get<std::string>());
    c.inner_lr = j.at("inner_lr").get<double>();
    c.inner_steps = j.at("inner_steps").get<int>();
    c.outer_lr = j.at("outer_lr").get<double>();
    c.outer_lr_min = j.at("outer_lr_min").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.meta_batch_size = j.at("meta_batch_size").get<int>();
    c.first_order = j.at("first_order").get<bool>();
    c.freeze_encoder = j.at("freeze_encoder").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.max_validation_tasks = j.at("max_validation_tasks").get<int>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.batch_pos = j.at("batch_pos").get<int>();
    c.batch_neg = j.at("batch_neg").get<int>();
    c.batch_regression = j.at("batch_regression").get<int>();
    c.forget.enabled = j.at("forget").at("enabled").get<bool>();
    c.forget.window = j.at("forget").at("window").get<int>();
    c.forget.auc_threshold = j.at("forget").at("auc_threshold").get<double>();
    c.forget.rmse_threshold = j.at("forget").at("rmse_threshold").get<double>();
    c.encoder_trunk_width = j.at("encoder_trunk_width").get<std::int64_t>();
    c.encoder_trunk_blocks = j.at("encoder_trunk_blocks").get<int>();
    c.encoder_norm_groups = j.at("encoder_norm_groups").get<std::int64_t>();
    c.encoder_dropout = j.at("encoder_dropout").get<double>();
    c.encoder_zero_init_heads = j.at("encoder_zero_init_heads").get<bool>();
    c.threads = j.at("threads").get<int>();
    return c;
}

} // namespace

void save_checkpoint(const MetaState& state, const std::string& dir) {
    fs::create_directories(dir);
    const ParamSet& learner = state.checkpoint_learner();

    json manifest;
    manifest["format_version"] = 1;
    manifest["byte_order"] = "little";
    manifest["config"] = config_to_json(state.config);
    manifest["model"] = model_to_json(state.model);
    manifest["encoder"] = state.encoder ? encoder_to_json(*state.encoder) : json(nullptr);
    manifest["epoch"] = state.epoch;
    manifest["best_epoch"] = state.best_epoch;
    manifest["best_metric"] = state.best_metric;
    manifest["has_best"] = state.has_best;
    manifest["validation_ids"] = state.validation_ids;
    manifest["tensors"]["learner"] = param_index(learner);
    write_doubles(fs::path(dir) / "learner.bin", flatten(learner));

    std::vector<double> opt = state.adam_learner.serialize();
    manifest["optimizer"]["learner_len"] = opt.size();
    if (state.encoder) {
        const ParamSet& enc = state.checkpoint_encoder();
        manifest["tensors"]["encoder"] = param_index(enc);
        write_doubles(fs::path(dir) / "encoder.bin", flatten(enc));
        std::vector<double> enc_opt = state.adam_encoder.serialize();
        manifest["optimizer"]["encoder_len"] = enc_opt.size();
        opt.insert(opt.end(), enc_opt.begin(), enc_opt.end());
    }
    write_doubles(fs::path(dir) / "optimizer.bin", opt);

    std::ofstream log(fs::path(dir) / "forgetfulness.csv");
    log << "epoch,task_id,metric,forgotten_flag\n";
    if (state.tracker)
        for (const auto& row : state.tracker->log())
            log << row.epoch << ',' << row.task_id << ',' << row.metric << ','
                << (row.forgotten ? 1 : 0) << '\n';

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << '\n';
}

MetaState load_checkpoint(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot open " + dir + "/manifest.json");
    json manifest;
    mf >> manifest;

    MetaState state;
    state.config = config_from_json(manifest.at("config"));
    state.model = model_from_json(manifest.at("model"));
    state.epoch = manifest.at("epoch").get<int>();
    state.best_epoch = manifest.at("best_epoch").get<int>();
    state.best_metric = manifest.at("best_metric").get<double>();
    state.has_best = manifest.at("has_best").get<bool>();
    state.validation_ids = manifest.at("validation_ids").get<std::vector<std::string>>();

    const json& lidx = manifest.at("tensors").at("learner");
    std::int64_t lcount = 0;
    for (const json& e : lidx) lcount += e.at("count").get<std::int64_t>();
    state.learner = unflatten(lidx, read_doubles(fs::path(dir) / "learner.bin",
                                                 static_cast<std::size_t>(lcount)));
    state.best_learner = state.learner;
    state.adam_learner = AdamState(state.learner);

    std::size_t learner_opt_len = manifest.at("optimizer").at("learner_len").get<std::size_t>();
    std::size_t total_opt = learner_opt_len;
    if (!manifest.at("encoder").is_null()) {
        state.encoder = encoder_from_json(manifest.at("encoder"));
        const json& eidx = manifest.at("tensors").at("encoder");
        std::int64_t ecount = 0;
        for (const json& e : eidx) ecount += e.at("count").get<std::int64_t>();
        state.encoder_params = unflatten(eidx, read_doubles(fs::path(dir) / "encoder.bin",
                                                            static_cast<std::size_t>(ecount)));
        state.best_encoder = state.encoder_params;
        state.adam_encoder = AdamState(state.encoder_params);
        total_opt += manifest.at("optimizer").at("encoder_len").get<std::size_t>();
    }
    std::vector<double> opt = read_doubles(fs::path(dir) / "optimizer.bin", total_opt);
    state.adam_learner.restore({opt.begin(), opt.begin() + static_cast<std::ptrdiff_t>(learner_opt_len)});
    if (state.encoder)
        state.adam_encoder.restore({opt.begin() + static_cast<std::ptrdiff_t>(learner_opt_len), opt.end()});
    return state;
}

} // namespace timl
