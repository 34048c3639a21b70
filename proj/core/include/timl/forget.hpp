// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace timl {

enum class MetricDirection {
    at_least, // classification: AUC ROC >= threshold counts toward memorization
    at_most,  // regression: RMSE <= threshold counts toward memorization
};

struct ForgetConfig {
    bool enabled = true;
    int window = 20;
    double auc_threshold = 0.95;
    double rmse_threshold = 4.0;
};

/// Tracks per-task training metrics and removes tasks that have stayed past
/// the memorization threshold for `window` consecutive recorded epochs.
/// Forgotten tasks are never re-added.
class MemorizationTracker {
public:
    enum class Decision { keep, forget };

    MemorizationTracker(double threshold, MetricDirection direction, int window = 20);

    /// Tracker for a task kind: classification uses the AUC rule, regression
    /// the RMSE rule.
    static MemorizationTracker for_classification(const ForgetConfig& cfg);
    static MemorizationTracker for_regression(const ForgetConfig& cfg);

    /// Appends this epoch's metric for the task. Returns forget exactly when
    /// the last `window` recorded epochs all meet the threshold (a single
    /// miss resets the requirement; the window must be continuous).
    Decision record_and_prune(const std::string& task_id, double epoch_metric);

    /// All task ids minus the forgotten set, original order preserved.
    std::vector<std::string> active_tasks(const std::vector<std::string>& all_tasks) const;

    bool is_forgotten(const std::string& task_id) const { return forgotten_.count(task_id) != 0; }
    std::size_t forgotten_count() const { return forgotten_.size(); }
    const std::set<std::string>& forgotten() const { return forgotten_; }

    double threshold() const { return threshold_; }
    MetricDirection direction() const { return direction_; }
    int window() const { return window_; }

    /// Rows recorded for the forgetfulness audit log (epoch supplied by the
    /// trainer at record time).
    struct LogRow {
        std::int64_t epoch;
        std::string task_id;
        double metric;
        bool forgotten;
    };
    void set_epoch(std::int64_t epoch) { epoch_ = epoch; }
    const std::vector<LogRow>& log() const { return log_; }

private:
    bool meets(double metric) const {
        return direction_ == MetricDirection::at_least ? metric >= threshold_ : metric <= threshold_;
    }

    double threshold_;
    MetricDirection direction_;
    int window_;
    std::int64_t epoch_ = 0;
    std::map<std::string, std::deque<double>> history_;
    std::set<std::string> forgotten_;
    std::vector<LogRow> log_;
};

} // namespace timl
