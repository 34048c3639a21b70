// SPDX-License-Identifier: Apache-2.0
#include "timl/forget.hpp"

#include "timl/errors.hpp"

namespace timl {

MemorizationTracker::MemorizationTracker(double threshold, MetricDirection direction, int window)
    : threshold_(threshold), direction_(direction), window_(window) {
    if (window < 1) throw ConfigError("MemorizationTracker: window must be >= 1");
}

MemorizationTracker MemorizationTracker::for_classification(const ForgetConfig& cfg) {
    return MemorizationTracker(cfg.auc_threshold, MetricDirection::at_least, cfg.window);
}

MemorizationTracker MemorizationTracker::for_regression(const ForgetConfig& cfg) {
    return MemorizationTracker(cfg.rmse_threshold, MetricDirection::at_most, cfg.window);
}

MemorizationTracker::Decision MemorizationTracker::record_and_prune(const std::string& task_id,
                                                                    double epoch_metric) {
    if (forgotten_.count(task_id))
        throw Error("MemorizationTracker: task '" + task_id + "' is already forgotten");
    auto& buf = history_[task_id];
    buf.push_back(epoch_metric);
    if (static_cast<int>(buf.size()) > window_) buf.pop_front();

    bool forget = static_cast<int>(buf.size()) == window_;
    if (forget)
        for (double m : buf)
            if (!meets(m)) {
                forget = false;
                break;
            }
    if (forget) forgotten_.insert(task_id);
    log_.push_back({epoch_, task_id, epoch_metric, forget});
    return forget ? Decision::forget : Decision::keep;
}

std::vector<std::string> MemorizationTracker::active_tasks(
    const std::vector<std::string>& all_tasks) const {
    std::vector<std::string> out;
    out.reserve(all_tasks.size());
    for (const std::string& id : all_tasks)
        if (!forgotten_.count(id)) out.push_back(id);
    return out;
}

} // namespace timl
