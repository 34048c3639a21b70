// SPDX-License-Identifier: Apache-2.0
#include "timl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "timl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace timl {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_latlon(double lat, double lon) {
    if (!(lat >= -90.0 && lat <= 90.0))
        throw ConfigError("latitude " + std::to_string(lat) + " out of [-90, 90]");
    if (!(lon >= -180.0 && lon <= 180.0))
        throw ConfigError("longitude " + std::to_string(lon) + " out of [-180, 180]");
}

std::vector<std::int64_t> rows_with_label(const Task& task, bool positive) {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < task.rows(); ++i)
        if ((task.labels[static_cast<std::size_t>(i)] != 0.0) == positive) out.push_back(i);
    return out;
}

// k draws from pool: a seeded permutation prefix when the pool is large
// enough, otherwise k with-replacement draws.
std::vector<std::int64_t> draw(const std::vector<std::int64_t>& pool, int k, Rng& rng) {
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(k));
    if (static_cast<int>(pool.size()) >= k) {
        auto perm = rng.permutation(pool.size());
        for (int i = 0; i < k; ++i) out.push_back(pool[perm[static_cast<std::size_t>(i)]]);
    } else {
        for (int i = 0; i < k; ++i)
            out.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
    }
    return out;
}

} // namespace

const char* task_kind_name(TaskKind kind) {
    return kind == TaskKind::classification ? "classification" : "regression";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "classification") return TaskKind::classification;
    if (name == "regression") return TaskKind::regression;
    throw ConfigError("unknown task kind '" + name + "'");
}

bool BoundingBox::contains(double lat, double lon, double margin) const {
    return lat >= min_lat - margin && lat <= max_lat + margin && lon >= min_lon - margin &&
           lon <= max_lon + margin;
}

std::vector<std::int64_t> Task::positive_rows() const { return rows_with_label(*this, true); }
std::vector<std::int64_t> Task::negative_rows() const { return rows_with_label(*this, false); }

bool Task::has_tag(const std::string& tag) const {
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

const Task& TaskBundle::by_id(const std::string& id) const {
    for (const Task& t : tasks)
        if (t.id == id) return t;
    throw Error("bundle: no task with id '" + id + "'");
}

std::array<double, 3> latlon_to_cartesian(double lat_deg, double lon_deg) {
    check_latlon(lat_deg, lon_deg);
    double lat = lat_deg * kDegToRad, lon = lon_deg * kDegToRad;
    return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

const char* fao_class_name(FaoClass c) {
    switch (c) {
    case FaoClass::cereals: return "cereals";
    case FaoClass::vegetables_and_melons: return "vegetables_and_melons";
    case FaoClass::fruit_and_nuts: return "fruit_and_nuts";
    case FaoClass::oilseed_crops: return "oilseed_crops";
    case FaoClass::root_tuber_crops: return "root_tuber_crops";
    case FaoClass::beverage_and_spice_crops: return "beverage_and_spice_crops";
    case FaoClass::leguminous_crops: return "leguminous_crops";
    case FaoClass::sugar_crops: return "sugar_crops";
    case FaoClass::other_crops: return "other_crops";
    }
    return "?";
}

FaoClass fao_class_of_crop(const std::string& crop_name) {
    // versioned crop -> FAO indicative group table (v1)
    static const std::map<std::string, FaoClass> table = {
        {"maize", FaoClass::cereals},
        {"wheat", FaoClass::cereals},
        {"rice", FaoClass::cereals},
        {"barley", FaoClass::cereals},
        {"sorghum", FaoClass::cereals},
        {"millet", FaoClass::cereals},
        {"teff", FaoClass::cereals},
        {"tomato", FaoClass::vegetables_and_melons},
        {"onion", FaoClass::vegetables_and_melons},
        {"melon", FaoClass::vegetables_and_melons},
        {"banana", FaoClass::fruit_and_nuts},
        {"mango", FaoClass::fruit_and_nuts},
        {"cashew", FaoClass::fruit_and_nuts},
        {"grape", FaoClass::fruit_and_nuts},
        {"soybean", FaoClass::oilseed_crops},
        {"sunflower", FaoClass::oilseed_crops},
        {"rapeseed", FaoClass::oilseed_crops},
        {"oil_palm", FaoClass::oilseed_crops},
        {"groundnut", FaoClass::oilseed_crops},
        {"cassava", FaoClass::root_tuber_crops},
        {"potato", FaoClass::root_tuber_crops},
        {"yam", FaoClass::root_tuber_crops},
        {"coffee", FaoClass::beverage_and_spice_crops},
        {"tea", FaoClass::beverage_and_spice_crops},
        {"cocoa", FaoClass::beverage_and_spice_crops},
        {"pepper", FaoClass::beverage_and_spice_crops},
        {"common_bean", FaoClass::leguminous_crops},
        {"chickpea", FaoClass::leguminous_crops},
        {"lentil", FaoClass::leguminous_crops},
        {"cowpea", FaoClass::leguminous_crops},
        {"sugarcane", FaoClass::sugar_crops},
        {"sugarbeet", FaoClass::sugar_crops},
        {"cotton", FaoClass::other_crops},
        {"tobacco", FaoClass::other_crops},
        {"rubber", FaoClass::other_crops},
    };
    auto it = table.find(crop_name);
    if (it == table.end()) throw ConfigError("unknown crop name '" + crop_name + "'");
    return it->second;
}

TaskInfo crop_task_info(FaoClass crop_class, double lat, double lon) {
    auto xyz = latlon_to_cartesian(lat, lon);
    std::vector<double> v(kCropInfoDim, 0.0);
    v[0] = xyz[0];
    v[1] = xyz[1];
    v[2] = xyz[2];
    v[static_cast<std::size_t>(3 + static_cast<int>(crop_class))] = 1.0;
    return TaskInfo{std::move(v)};
}

TaskInfo crop_task_info(const std::string& crop_name, double lat, double lon) {
    return crop_task_info(fao_class_of_crop(crop_name), lat, lon);
}

TaskInfo crop_vs_noncrop_task_info(double lat, double lon) {
    auto xyz = latlon_to_cartesian(lat, lon);
    std::vector<double> v(kCropInfoDim, 0.0);
    v[0] = xyz[0];
    v[1] = xyz[1];
    v[2] = xyz[2];
    for (int c = 0; c < kFaoCropClasses; ++c) v[static_cast<std::size_t>(3 + c)] = 1.0 / kFaoCropClasses;
    // non-crop dim (index 12) stays 0
    return TaskInfo{std::move(v)};
}

TaskInfo yield_task_info(double lat, double lon, int state_index, int num_states) {
    if (state_index < 0 || state_index >= num_states)
        throw ConfigError("yield_task_info: state index " + std::to_string(state_index) +
                          " out of range for " + std::to_string(num_states) + " states");
    auto xyz = latlon_to_cartesian(lat, lon);
    std::vector<double> v(static_cast<std::size_t>(3 + num_states), 0.0);
    v[0] = xyz[0];
    v[1] = xyz[1];
    v[2] = xyz[2];
    v[static_cast<std::size_t>(3 + state_index)] = 1.0;
    return TaskInfo{std::move(v)};
}

Task bbox_augment(const Task& task, std::span<const CandidatePoint> candidates, double margin) {
    Task out = task;
    std::set<std::string> seen(task.row_ids.begin(), task.row_ids.end());
    for (const CandidatePoint& c : candidates) {
        if (!task.bbox.contains(c.lat, c.lon, margin)) continue;
        if (!c.id.empty() && !seen.insert(c.id).second) continue;
        if (static_cast<std::int64_t>(c.features.size()) != task.row_width())
            throw ShapeError("bbox_augment: candidate '" + c.id + "' feature width " +
                             std::to_string(c.features.size()) + " != " +
                             std::to_string(task.row_width()));
        out.features.insert(out.features.end(), c.features.begin(), c.features.end());
        out.labels.push_back(c.label);
        out.row_ids.push_back(c.id);
    }
    return out;
}

Batch rows_to_batch(const Task& task, std::span<const std::int64_t> rows) {
    std::int64_t width = task.row_width();
    std::vector<double> x;
    x.reserve(rows.size() * static_cast<std::size_t>(width));
    std::vector<double> y;
    y.reserve(rows.size());
    for (std::int64_t r : rows) {
        auto begin = task.features.begin() + r * width;
        x.insert(x.end(), begin, begin + width);
        y.push_back(task.labels[static_cast<std::size_t>(r)]);
    }
    Batch b;
    b.x = tensor({static_cast<std::int64_t>(rows.size()), width}, std::move(x));
    b.y = tensor({static_cast<std::int64_t>(rows.size())}, std::move(y));
    b.indices.assign(rows.begin(), rows.end());
    return b;
}

Batch sample_balanced_batch(const Task& task, std::span<const std::int64_t> subset, int n_pos,
                            int n_neg, std::uint64_t seed) {
    std::vector<std::int64_t> pos, neg;
    for (std::int64_t r : subset)
        (task.labels[static_cast<std::size_t>(r)] != 0.0 ? pos : neg).push_back(r);
    if (pos.empty() || neg.empty())
        throw Error("sample_balanced_batch: task '" + task.id +
                    "' is missing a class in the sampled subset (" + std::to_string(pos.size()) +
                    " positive, " + std::to_string(neg.size()) + " negative)");
    Rng rng(seed);
    std::vector<std::int64_t> rows = draw(pos, n_pos, rng);
    std::vector<std::int64_t> negs = draw(neg, n_neg, rng);
    rows.insert(rows.end(), negs.begin(), negs.end());
    return rows_to_batch(task, rows);
}

Batch sample_balanced_batch(const Task& task, int n_pos, int n_neg, std::uint64_t seed) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(task.rows()));
    std::iota(all.begin(), all.end(), std::int64_t{0});
    return sample_balanced_batch(task, all, n_pos, n_neg, seed);
}

Batch sample_uniform_batch(const Task& task, std::span<const std::int64_t> subset, int n,
                           std::uint64_t seed) {
    if (subset.empty()) throw Error("sample_uniform_batch: task '" + task.id + "' has no rows");
    std::vector<std::int64_t> pool(subset.begin(), subset.end());
    Rng rng(seed);
    return rows_to_batch(task, draw(pool, n, rng));
}

Batch sample_uniform_batch(const Task& task, int n, std::uint64_t seed) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(task.rows()));
    std::iota(all.begin(), all.end(), std::int64_t{0});
    return sample_uniform_batch(task, all, n, seed);
}

SplitRows split_support_query(const Task& task, std::uint64_t seed) {
    Rng rng(seed);
    SplitRows out;
    auto split_pool = [&](std::vector<std::int64_t> pool) {
        auto perm = rng.permutation(pool.size());
        std::size_t half = pool.size() / 2;
        for (std::size_t i = 0; i < pool.size(); ++i)
            (i < half ? out.support : out.query).push_back(pool[perm[i]]);
    };
    if (task.kind == TaskKind::classification) {
        split_pool(task.positive_rows());
        split_pool(task.negative_rows());
    } else {
        std::vector<std::int64_t> all(static_cast<std::size_t>(task.rows()));
        std::iota(all.begin(), all.end(), std::int64_t{0});
        split_pool(std::move(all));
    }
    std::sort(out.support.begin(), out.support.end());
    std::sort(out.query.begin(), out.query.end());
    return out;
}

// -- bundle I/O ------------------------------------------------------------------

void save_bundle(const TaskBundle& bundle, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["name"] = bundle.name;
    manifest["feature_dim"] = bundle.feature_dim;
    manifest["timesteps"] = bundle.timesteps;
    manifest["feature_layout"] = bundle.timesteps > 0 ? "timestep_major" : "flat";
    manifest["info_dim"] = bundle.info_dim;
    manifest["spatial_info"] = bundle.spatial_info;
    manifest["tasks"] = json::array();

    int idx = 0;
    for (const Task& t : bundle.tasks) {
        char file[64];
        std::snprintf(file, sizeof(file), "task_%04d.csv", idx++);
        json jt;
        jt["id"] = t.id;
        jt["kind"] = task_kind_name(t.kind);
        jt["info"] = t.info.values;
        jt["bbox"] = {{"min_lat", t.bbox.min_lat},
                      {"max_lat", t.bbox.max_lat},
                      {"min_lon", t.bbox.min_lon},
                      {"max_lon", t.bbox.max_lon}};
        jt["data_file"] = file;
        jt["rows"] = t.rows();
        jt["tags"] = t.tags;
        manifest["tasks"].push_back(jt);

        std::ofstream csv(fs::path(dir) / file);
        if (!csv) throw IoError(std::string("cannot write ") + file);
        std::int64_t width = t.row_width();
        for (std::int64_t c = 0; c < width; ++c) csv << 'f' << c << ',';
        csv << "label\n";
        for (std::int64_t r = 0; r < t.rows(); ++r) {
            for (std::int64_t c = 0; c < width; ++c)
                csv << format_double(t.features[static_cast<std::size_t>(r * width + c)]) << ',';
            csv << format_double(t.labels[static_cast<std::size_t>(r)]) << '\n';
        }
    }
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest.json in " + dir);
    mf << manifest.dump(2) << '\n';
}

namespace {

json read_manifest(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot open " + dir + "/manifest.json");
    json manifest;
    mf >> manifest;
    return manifest;
}

} // namespace

TaskBundle load_bundle(const std::string& dir) {
    json manifest = read_manifest(dir);
    TaskBundle bundle;
    bundle.name = manifest.value("name", "");
    bundle.feature_dim = manifest.at("feature_dim").get<std::int64_t>();
    bundle.timesteps = manifest.at("timesteps").get<std::int64_t>();
    bundle.info_dim = manifest.at("info_dim").get<std::int64_t>();
    bundle.spatial_info = manifest.value("spatial_info", false);

    for (const json& jt : manifest.at("tasks")) {
        Task t;
        t.id = jt.at("id").get<std::string>();
        t.kind = task_kind_from_name(jt.at("kind").get<std::string>());
        t.info.values = jt.at("info").get<std::vector<double>>();
        t.feature_dim = bundle.feature_dim;
        t.timesteps = bundle.timesteps;
        const json& bb = jt.at("bbox");
        t.bbox = {bb.at("min_lat").get<double>(), bb.at("max_lat").get<double>(),
                  bb.at("min_lon").get<double>(), bb.at("max_lon").get<double>()};
        if (jt.contains("tags")) t.tags = jt.at("tags").get<std::vector<std::string>>();

        fs::path file = fs::path(dir) / jt.at("data_file").get<std::string>();
        std::ifstream csv(file);
        if (!csv) throw IoError("cannot open " + file.string());
        std::string line;
        std::getline(csv, line); // header
        std::int64_t width = t.row_width();
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<double> row;
            while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
            if (static_cast<std::int64_t>(row.size()) != width + 1)
                throw IoError(file.string() + ": row has " + std::to_string(row.size()) +
                              " cells, expected " + std::to_string(width + 1));
            t.features.insert(t.features.end(), row.begin(), row.end() - 1);
            t.labels.push_back(row.back());
        }
        if (jt.contains("rows") && jt.at("rows").get<std::int64_t>() != t.rows())
            throw IoError(file.string() + ": row count does not match manifest");
        bundle.tasks.push_back(std::move(t));
    }
    return bundle;
}

std::vector<std::string> validate_bundle(const std::string& dir) {
    std::vector<std::string> problems;
    TaskBundle bundle;
    try {
        bundle = load_bundle(dir);
    } catch (const std::exception& e) {
        problems.push_back(std::string("load failed: ") + e.what());
        return problems;
    }
    std::set<std::string> ids;
    for (const Task& t : bundle.tasks) {
        auto complain = [&](const std::string& msg) { problems.push_back(t.id + ": " + msg); };
        if (!ids.insert(t.id).second) complain("duplicate task id");
        if (t.info.size() != bundle.info_dim)
            complain("info length " + std::to_string(t.info.size()) + " != bundle info_dim " +
                     std::to_string(bundle.info_dim));
        if (bundle.spatial_info && t.info.size() >= 3) {
            double n2 = t.info.values[0] * t.info.values[0] + t.info.values[1] * t.info.values[1] +
                        t.info.values[2] * t.info.values[2];
            if (std::fabs(std::sqrt(n2) - 1.0) > 1e-12) complain("spatial triple is not unit norm");
        }
        if (!(t.bbox.min_lat >= -90 && t.bbox.max_lat <= 90 && t.bbox.min_lat <= t.bbox.max_lat))
            complain("bbox latitude out of range");
        if (!(t.bbox.min_lon >= -180 && t.bbox.max_lon <= 180 && t.bbox.min_lon <= t.bbox.max_lon))
            complain("bbox longitude out of range");
        if (t.kind == TaskKind::classification)
            for (double y : t.labels)
                if (y != 0.0 && y != 1.0) {
                    complain("classification label not in {0,1}");
                    break;
                }
        for (double v : t.features)
            if (!std::isfinite(v)) {
                complain("non-finite feature value");
                break;
            }
        if (t.rows() * t.row_width() != static_cast<std::int64_t>(t.features.size()))
            complain("feature buffer is not rows*row_width");
    }
    return problems;
}

} // namespace timl
