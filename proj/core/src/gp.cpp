// SPDX-License-Identifier: Apache-2.0
#include "timl/gp.hpp"

#include <cmath>
#include <string>

namespace timl {

namespace {

// dense lower-Cholesky in place; returns false when a pivot is not positive
bool cholesky(std::vector<double>& a, std::int64_t n) {
    for (std::int64_t j = 0; j < n; ++j) {
        double d = a[static_cast<std::size_t>(j * n + j)];
        for (std::int64_t k = 0; k < j; ++k) {
            double l = a[static_cast<std::size_t>(j * n + k)];
            d -= l * l;
        }
        if (d <= 0.0 || !std::isfinite(d)) return false;
        double root = std::sqrt(d);
        a[static_cast<std::size_t>(j * n + j)] = root;
        for (std::int64_t i = j + 1; i < n; ++i) {
            double s = a[static_cast<std::size_t>(i * n + j)];
            for (std::int64_t k = 0; k < j; ++k)
                s -= a[static_cast<std::size_t>(i * n + k)] * a[static_cast<std::size_t>(j * n + k)];
            a[static_cast<std::size_t>(i * n + j)] = s / root;
        }
    }
    // zero the upper triangle so the factor is self-contained
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i * n + j)] = 0.0;
    return true;
}

// solves L L' x = b given the lower factor
std::vector<double> chol_solve(const std::vector<double>& chol, std::int64_t n,
                               std::vector<double> b) {
    for (std::int64_t i = 0; i < n; ++i) {
        double s = b[static_cast<std::size_t>(i)];
        for (std::int64_t k = 0; k < i; ++k)
            s -= chol[static_cast<std::size_t>(i * n + k)] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = s / chol[static_cast<std::size_t>(i * n + i)];
    }
    for (std::int64_t i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (std::int64_t k = i + 1; k < n; ++k)
            s -= chol[static_cast<std::size_t>(k * n + i)] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] = s / chol[static_cast<std::size_t>(i * n + i)];
    }
    return b;
}

double sq_dist2(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    double d0 = a[0] - b[0], d1 = a[1] - b[1];
    return d0 * d0 + d1 * d1;
}

} // namespace

void GPConfig::validate() const {
    if (signal_var <= 0 || loc_scale <= 0 || year_scale <= 0 || noise_var <= 0 ||
        jitter_start <= 0 || jitter_max < jitter_start)
        throw ConfigError("gp: all hyperparameters must be strictly positive");
}

void GPData::validate(bool with_targets) const {
    std::size_t n = years.size();
    if (locations.size() != n) throw ShapeError("gp: locations/years length mismatch");
    if (hidden.size() != n * static_cast<std::size_t>(hidden_dim))
        throw ShapeError("gp: hidden feature buffer is not rows*hidden_dim");
    if (with_targets && targets.size() != n) throw ShapeError("gp: targets length mismatch");
}

double gp_kernel(const std::array<double, 2>& loc_a, double year_a,
                 const std::array<double, 2>& loc_b, double year_b, const GPConfig& cfg) {
    double dy = year_a - year_b;
    double value = cfg.signal_var * std::exp(-sq_dist2(loc_a, loc_b) / (2.0 * cfg.loc_scale) -
                                             dy * dy / (2.0 * cfg.year_scale));
    if (loc_a == loc_b && year_a == year_b) value += cfg.noise_var;
    return value;
}

GPFit GPFit::fit(GPData train, const GPConfig& cfg) {
    cfg.validate();
    train.validate(/*with_targets=*/true);
    std::int64_t n = train.rows();
    if (n < 1) throw ConfigError("gp: need at least one training row");
    std::int64_t p = train.hidden_dim;

    // noise-free covariance plus the observation noise on the diagonal
    std::vector<double> base(static_cast<std::size_t>(n * n));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j <= i; ++j) {
            double dy = train.years[static_cast<std::size_t>(i)] - train.years[static_cast<std::size_t>(j)];
            double v = cfg.signal_var *
                       std::exp(-sq_dist2(train.locations[static_cast<std::size_t>(i)],
                                          train.locations[static_cast<std::size_t>(j)]) /
                                    (2.0 * cfg.loc_scale) -
                                dy * dy / (2.0 * cfg.year_scale));
            base[static_cast<std::size_t>(i * n + j)] = v;
            base[static_cast<std::size_t>(j * n + i)] = v;
        }
    for (std::int64_t i = 0; i < n; ++i) base[static_cast<std::size_t>(i * n + i)] += cfg.noise_var;

    GPFit out;
    out.cfg_ = cfg;

    std::vector<double> chol;
    double jitter = 0.0;
    bool ok = false;
    for (double j = 0.0; !ok; j = j == 0.0 ? cfg.jitter_start : j * 10.0) {
        if (j > cfg.jitter_max)
            throw ConfigError("gp: Cholesky failed at maximum jitter " +
                              std::to_string(cfg.jitter_max));
        chol = base;
        for (std::int64_t i = 0; i < n; ++i) chol[static_cast<std::size_t>(i * n + i)] += j;
        ok = cholesky(chol, n);
        jitter = j;
    }
    out.jitter_used_ = jitter;

    // GLS mean: beta = (H' C^-1 H)^-1 H' C^-1 y
    std::vector<double> beta;
    std::vector<double> residual = train.targets;
    if (p > 0) {
        std::vector<std::vector<double>> cinv_h(static_cast<std::size_t>(p));
        for (std::int64_t c = 0; c < p; ++c) {
            std::vector<double> col(static_cast<std::size_t>(n));
            for (std::int64_t r = 0; r < n; ++r)
                col[static_cast<std::size_t>(r)] = train.hidden[static_cast<std::size_t>(r * p + c)];
            cinv_h[static_cast<std::size_t>(c)] = chol_solve(chol, n, std::move(col));
        }
        std::vector<double> normal(static_cast<std::size_t>(p * p));
        std::vector<double> rhs(static_cast<std::size_t>(p));
        for (std::int64_t a = 0; a < p; ++a) {
            for (std::int64_t b = 0; b <= a; ++b) {
                double s = 0;
                for (std::int64_t r = 0; r < n; ++r)
                    s += train.hidden[static_cast<std::size_t>(r * p + a)] *
                         cinv_h[static_cast<std::size_t>(b)][static_cast<std::size_t>(r)];
                normal[static_cast<std::size_t>(a * p + b)] = s;
                normal[static_cast<std::size_t>(b * p + a)] = s;
            }
            double s = 0;
            for (std::int64_t r = 0; r < n; ++r)
                s += cinv_h[static_cast<std::size_t>(a)][static_cast<std::size_t>(r)] *
                     train.targets[static_cast<std::size_t>(r)];
            rhs[static_cast<std::size_t>(a)] = s;
        }
        double trace = 0;
        for (std::int64_t a = 0; a < p; ++a) trace += normal[static_cast<std::size_t>(a * p + a)];
        std::vector<double> nf;
        bool nok = false;
        for (double ridge = 0.0; !nok; ridge = ridge == 0.0 ? 1e-12 * std::max(trace, 1.0) : ridge * 10.0) {
            if (ridge > 1e-4 * std::max(trace, 1.0))
                throw ConfigError("gp: GLS normal equations are singular");
            nf = normal;
            for (std::int64_t a = 0; a < p; ++a) nf[static_cast<std::size_t>(a * p + a)] += ridge;
            nok = cholesky(nf, p);
        }
        beta = chol_solve(nf, p, rhs);
        for (std::int64_t r = 0; r < n; ++r) {
            double mean = 0;
            for (std::int64_t c = 0; c < p; ++c)
                mean += train.hidden[static_cast<std::size_t>(r * p + c)] * beta[static_cast<std::size_t>(c)];
            residual[static_cast<std::size_t>(r)] -= mean;
        }
    }

    out.mean_coef_ = std::move(beta);
    out.residual_weights_ = chol_solve(chol, n, std::move(residual));
    out.train_ = std::move(train);
    return out;
}

std::vector<double> GPFit::predict(const GPData& test) const {
    test.validate(/*with_targets=*/false);
    if (test.hidden_dim != train_.hidden_dim)
        throw ShapeError("gp: test hidden width differs from training");
    std::int64_t n = train_.rows(), p = train_.hidden_dim;
    std::vector<double> preds(static_cast<std::size_t>(test.rows()), 0.0);
    for (std::int64_t t = 0; t < test.rows(); ++t) {
        double value = 0;
        for (std::int64_t c = 0; c < p; ++c)
            value += test.hidden[static_cast<std::size_t>(t * p + c)] *
                     mean_coef_[static_cast<std::size_t>(c)];
        for (std::int64_t r = 0; r < n; ++r) {
            double dy = test.years[static_cast<std::size_t>(t)] - train_.years[static_cast<std::size_t>(r)];
            double k = cfg_.signal_var *
                       std::exp(-sq_dist2(test.locations[static_cast<std::size_t>(t)],
                                          train_.locations[static_cast<std::size_t>(r)]) /
                                    (2.0 * cfg_.loc_scale) -
                                dy * dy / (2.0 * cfg_.year_scale));
            value += k * residual_weights_[static_cast<std::size_t>(r)];
        }
        preds[static_cast<std::size_t>(t)] = value;
    }
    return preds;
}

std::vector<double> gp_fit_predict(const GPData& train, const GPData& test, const GPConfig& cfg) {
    return GPFit::fit(train, cfg).predict(test);
}

} // namespace timl
