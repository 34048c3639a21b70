// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "timl/encoder.hpp"
#include "timl/tensor.hpp"

namespace timl {

enum class TaskKind { classification, regression };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct BoundingBox {
    double min_lat = 0, max_lat = 0, min_lon = 0, max_lon = 0;

    /// Closed box containment after expanding every side by `margin` degrees.
    bool contains(double lat, double lon, double margin = 0.0) const;
    double centroid_lat() const { return 0.5 * (min_lat + max_lat); }
    double centroid_lon() const { return 0.5 * (min_lon + max_lon); }
};

/// A named distribution of (features, label) pairs plus its task information
/// and spatial metadata. Features are row-major [rows, row_width]; time
/// series rows are flattened timestep-major.
struct Task {
    std::string id;
    TaskKind kind = TaskKind::classification;
    TaskInfo info;
    std::int64_t feature_dim = 0; // per-timestep channels, or flat width
    std::int64_t timesteps = 0;   // 0 for flat feature vectors
    std::vector<double> features;
    std::vector<double> labels;
    std::vector<std::string> row_ids; // empty: rows identified by index
    BoundingBox bbox;
    std::vector<std::string> tags;

    std::int64_t row_width() const { return timesteps > 0 ? feature_dim * timesteps : feature_dim; }
    std::int64_t rows() const {
        return row_width() == 0 ? 0 : static_cast<std::int64_t>(features.size()) / row_width();
    }
    std::vector<std::int64_t> positive_rows() const;
    std::vector<std::int64_t> negative_rows() const;
    bool has_tag(const std::string& tag) const;
};

struct TaskBundle {
    std::string name;
    std::int64_t feature_dim = 0;
    std::int64_t timesteps = 0;
    std::int64_t info_dim = 0;
    bool spatial_info = false; // first 3 info entries are a unit vector
    std::vector<Task> tasks;

    const Task& by_id(const std::string& id) const;
};

// -- task information encodings ----------------------------------------------

/// [cos(lat)cos(lon), cos(lat)sin(lon), sin(lat)] from degrees; unit norm.
/// Keeps extreme longitudes adjacent.
std::array<double, 3> latlon_to_cartesian(double lat_deg, double lon_deg);

/// FAO indicative crop classification groups used in the 13-dimensional crop
/// task-information vector (9 crop groups + non-crop). Table version 1.
enum class FaoClass : int {
    cereals = 0,
    vegetables_and_melons,
    fruit_and_nuts,
    oilseed_crops,
    root_tuber_crops,
    beverage_and_spice_crops,
    leguminous_crops,
    sugar_crops,
    other_crops,
};
inline constexpr int kFaoCropClasses = 9;
inline constexpr int kCropInfoDim = 13; // 3 spatial + 9 crop groups + non-crop

const char* fao_class_name(FaoClass c);
/// Crop name -> FAO group (maize -> cereals, coffee -> beverage_and_spice_crops, ...).
FaoClass fao_class_of_crop(const std::string& crop_name);

/// Specific-crop task: one-hot on the crop's FAO group.
TaskInfo crop_task_info(const std::string& crop_name, double lat, double lon);
TaskInfo crop_task_info(FaoClass crop_class, double lat, double lon);
/// Crop-vs-non-crop task: 1/9 across the nine crop groups, 0 on the non-crop dim.
TaskInfo crop_vs_noncrop_task_info(double lat, double lon);

/// Yield task: spatial triple + one-hot state block, 3+num_states dims.
TaskInfo yield_task_info(double lat, double lon, int state_index, int num_states);

// -- task construction ---------------------------------------------------------

struct CandidatePoint {
    std::string id;
    double lat = 0, lon = 0;
    std::vector<double> features;
    double label = 0;
};

/// Weak task augmentation: extends the task with candidate points that fall
/// inside the task's bounding box expanded by `margin` degrees (closed box),
/// deduplicated by point id against existing rows.
Task bbox_augment(const Task& task, std::span<const CandidatePoint> candidates, double margin);

// -- batching -------------------------------------------------------------------

struct Batch {
    Tensor x; // [n, row_width]
    Tensor y; // [n]
    std::vector<std::int64_t> indices;

    std::int64_t size() const { return y.defined() ? y.numel() : 0; }
};

Batch rows_to_batch(const Task& task, std::span<const std::int64_t> rows);

/// n_pos positives + n_neg negatives, sampled without replacement when a
/// class has enough rows and with replacement otherwise. Deterministic under
/// seed. Throws if a class is entirely absent.
Batch sample_balanced_batch(const Task& task, int n_pos, int n_neg, std::uint64_t seed);
/// Same, restricted to a row subset.
Batch sample_balanced_batch(const Task& task, std::span<const std::int64_t> subset, int n_pos,
                            int n_neg, std::uint64_t seed);

/// Uniform batch of n rows (regression tasks).
Batch sample_uniform_batch(const Task& task, int n, std::uint64_t seed);
Batch sample_uniform_batch(const Task& task, std::span<const std::int64_t> subset, int n,
                           std::uint64_t seed);

/// Disjoint support/query halves for one epoch; classification tasks are
/// split per class so both halves keep both classes whenever the task has
/// them. Deterministic under seed.
struct SplitRows {
    std::vector<std::int64_t> support;
    std::vector<std::int64_t> query;
};
SplitRows split_support_query(const Task& task, std::uint64_t seed);

// -- on-disk bundle format -------------------------------------------------------

/// Directory layout: manifest.json plus one CSV per task with header
/// f0..f{d-1},label. Doubles use shortest round-trip formatting.
void save_bundle(const TaskBundle& bundle, const std::string& dir);
TaskBundle load_bundle(const std::string& dir);
/// Every module invariant, as human-readable violations; empty means valid.
std::vector<std::string> validate_bundle(const std::string& dir);

} // namespace timl
