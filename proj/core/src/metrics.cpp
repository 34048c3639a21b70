// SPDX-License-Identifier: Apache-2.0
#include "timl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "timl/errors.hpp"

namespace timl {

double auc_roc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc_roc: length mismatch");
    std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (double y : labels) n_pos += y != 0.0;
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("auc_roc: both classes must be present");

    // rank-sum with tie averaging
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0.0) pos_rank_sum += avg_rank;
        i = j;
    }
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double f1_at_half(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw ShapeError("f1_at_half: length mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= 0.5;
        bool truth = labels[i] != 0.0;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
    }
    double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2 * tp / denom;
}

double mse(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size() || preds.empty())
        throw ShapeError("mse: lengths must match and be >= 1");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double d = preds[i] - targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(preds.size());
}

double rmse(std::span<const double> preds, std::span<const double> targets) {
    return std::sqrt(mse(preds, targets));
}

MeanStderr mean_stderr(std::span<const double> values) {
    MeanStderr out;
    out.n = values.size();
    if (out.n == 0) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(out.n);
    if (out.n < 2) return out;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    double sample_sd = std::sqrt(ss / static_cast<double>(out.n - 1));
    out.stderr_ = sample_sd / std::sqrt(static_cast<double>(out.n));
    return out;
}

} // namespace timl
