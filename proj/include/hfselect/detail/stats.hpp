#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace hfselect::detail {

inline double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance with divisor n - 1; 0 for fewer than two values.
inline double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double mu = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - mu) * (v - mu);
    return ss / static_cast<double>(x.size() - 1);
}

inline std::vector<double> diff(std::span<const double> x, std::size_t lag = 1) {
    std::vector<double> out;
    if (x.size() <= lag) return out;
    out.reserve(x.size() - lag);
    for (std::size_t t = lag; t < x.size(); ++t) out.push_back(x[t] - x[t - lag]);
    return out;
}

/// Sample autocorrelations r_1..r_max_lag (biased denominator, as in R's acf).
/// Lags at or beyond the series length are NaN; a zero-variance series gives NaN throughout.
inline std::vector<double> acf(std::span<const double> x, std::size_t max_lag) {
    std::vector<double> out(max_lag, std::nan(""));
    const std::size_t n = x.size();
    if (n < 2) return out;
    const double mu = mean(x);
    double denom = 0.0;
    for (double v : x) denom += (v - mu) * (v - mu);
    if (!(denom > 0.0)) return out;
    for (std::size_t k = 1; k <= max_lag && k < n; ++k) {
        double num = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) num += (x[t] - mu) * (x[t + k] - mu);
        out[k - 1] = num / denom;
    }
    return out;
}

/// Partial autocorrelations via Durbin-Levinson on the sample ACF.
inline std::vector<double> pacf(std::span<const double> x, std::size_t max_lag) {
    std::vector<double> out(max_lag, std::nan(""));
    const auto r = acf(x, max_lag);
    std::vector<double> phi_prev, phi;
    for (std::size_t k = 1; k <= max_lag; ++k) {
        if (!std::isfinite(r[k - 1])) break;
        double num = r[k - 1];
        double den = 1.0;
        for (std::size_t j = 1; j < k; ++j) {
            num -= phi_prev[j - 1] * r[k - j - 1];
            den -= phi_prev[j - 1] * r[j - 1];
        }
        if (!(std::abs(den) > 1e-300)) break;
        const double phikk = num / den;
        phi.assign(k, 0.0);
        phi[k - 1] = phikk;
        for (std::size_t j = 1; j < k; ++j) phi[j - 1] = phi_prev[j - 1] - phikk * phi_prev[k - j - 1];
        out[k - 1] = phikk;
        phi_prev = phi;
    }
    return out;
}

struct LeastSquaresFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residuals;
    bool ridge_fallback = false;
};

/// Ordinary least squares. With ridge > 0 solves the penalised normal equations;
/// otherwise a rank-deficient design falls back to ridge = 1e-8 and sets the flag.
inline LeastSquaresFit least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge = 0.0) {
    LeastSquaresFit fit;
    auto penalised = [&](double lambda) {
        Eigen::MatrixXd xtx = X.transpose() * X;
        xtx.diagonal().array() += lambda;
        return Eigen::VectorXd(xtx.ldlt().solve(X.transpose() * y));
    };
    if (X.cols() == 0) {
        fit.coef = Eigen::VectorXd::Zero(0);
    } else if (ridge > 0.0) {
        fit.coef = penalised(ridge);
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (qr.rank() < X.cols()) {
            fit.coef = penalised(1e-8);
            fit.ridge_fallback = true;
        } else {
            fit.coef = qr.solve(y);
        }
    }
    fit.residuals = X.cols() == 0 ? y : Eigen::VectorXd(y - X * fit.coef);
    return fit;
}

/// Median of a copy of the values; NaN when empty.
inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

} // namespace hfselect::detail
