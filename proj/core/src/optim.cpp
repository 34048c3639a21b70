// SPDX-License-Identifier: Apache-2.0
#include "timl/optim.hpp"

#include <cmath>

namespace timl {

double cosine_annealed_lr(double initial, double min_lr, int epoch, int total_epochs) {
    if (initial <= 0 || min_lr <= 0) throw ConfigError("cosine lr: rates must be positive");
    if (min_lr > initial) throw ConfigError("cosine lr: min_lr must not exceed the initial rate");
    if (total_epochs <= 1 || epoch <= 0) return initial;
    if (epoch >= total_epochs - 1) return min_lr;
    double pos = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return min_lr + (initial - min_lr) * 0.5 * (1.0 + std::cos(pos * M_PI));
}

double clip_global_norm(std::vector<ParamSet*> grad_sets, double max_norm) {
    double sq = 0.0;
    for (const ParamSet* set : grad_sets)
        for (const auto& [name, g] : *set)
            for (double v : g.values()) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double factor = max_norm / norm;
        for (ParamSet* set : grad_sets)
            for (const auto& [name, g] : *set) set->set(name, scale(g, factor).detach());
    }
    return norm;
}

AdamState::AdamState(const ParamSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params) {
        m_[name].assign(t.values().size(), 0.0);
        v_[name].assign(t.values().size(), 0.0);
    }
}

void AdamState::step(ParamSet& params, const ParamSet& grads, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, m] : m_) {
        const auto& g = grads.at(name).values();
        auto& v = v_.at(name);
        const Tensor& p = params.at(name);
        std::vector<double> updated = p.values();
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            updated[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
        params.set(name, tensor(p.shape(), std::move(updated), true));
    }
}

std::vector<double> AdamState::serialize() const {
    std::vector<double> out;
    for (const auto& [name, m] : m_) out.insert(out.end(), m.begin(), m.end());
    for (const auto& [name, v] : v_) out.insert(out.end(), v.begin(), v.end());
    out.push_back(static_cast<double>(t_));
    return out;
}

void AdamState::restore(const std::vector<double>& data) {
    std::size_t need = 1;
    for (const auto& [name, m] : m_) need += 2 * m.size();
    if (data.size() != need) throw IoError("AdamState::restore: size mismatch");
    std::size_t off = 0;
    for (auto& [name, m] : m_) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.begin());
        off += m.size();
    }
    for (auto& [name, v] : v_) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
        off += v.size();
    }
    t_ = static_cast<std::int64_t>(data.back());
}

} // namespace timl
