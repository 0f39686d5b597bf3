#pragma once

#include "hfselect/detail/parallel.hpp"
#include "hfselect/detail/stats.hpp"
#include "hfselect/error.hpp"
#include "hfselect/hierarchy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace hfselect {

/**
 * Pinned, ordered list of per-series features. The seasonal entries
 * (seas_acf1, seas_pacf, seasonal_strength) exist only when the seasonal
 * period is above 1, so the registry and its tag depend on the period.
 */
struct FeatureRegistry {
    std::string tag;
    std::size_t seasonal_period = 1;
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }
    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ValidationError("feature registry: unknown feature '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }
};

inline constexpr const char* kFeatureRegistryVersion = "hfselect-features-v1";

inline std::shared_ptr<const FeatureRegistry> feature_registry(std::size_t seasonal_period = 1) {
    if (seasonal_period == 0) throw ValidationError("feature registry: seasonal period must be >= 1");
    static std::mutex mu;
    static std::map<std::size_t, std::shared_ptr<const FeatureRegistry>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[seasonal_period];
    if (slot) return slot;
    const bool seasonal = seasonal_period > 1;
    FeatureRegistry reg;
    reg.seasonal_period = seasonal_period;
    reg.tag = std::string(kFeatureRegistryVersion) + ";period=" + std::to_string(seasonal_period);
    auto add = [&](const char* name) { reg.names.emplace_back(name); };
    add("entropy");
    add("lumpiness");
    add("stability");
    add("hurst");
    add("x_acf1");
    add("x_acf10");
    add("diff1_acf1");
    add("diff1_acf10");
    add("diff2_acf1");
    add("diff2_acf10");
    if (seasonal) add("seas_acf1");
    add("x_pacf5");
    add("diff1x_pacf5");
    add("diff2x_pacf5");
    if (seasonal) add("seas_pacf");
    add("e_acf1");
    add("e_acf10");
    add("trend");
    if (seasonal) add("seasonal_strength");
    add("spike");
    add("linearity");
    add("curvature");
    add("nonlinearity");
    add("arch_lm");
    add("unitroot_kpss");
    add("max_var_shift");
    add("fluctanal_prop_r1");
    add("nperiods");
    add("seasonal_period");
    slot = std::make_shared<const FeatureRegistry>(std::move(reg));
    return slot;
}

/// Features unchanged by y -> a*y + b with a > 0: the autocorrelation family,
/// trend and seasonal strength, entropy and nonlinearity.
inline std::vector<std::string> affine_invariant_features(const FeatureRegistry& reg) {
    static const std::vector<std::string> all = {"entropy",   "x_acf1",       "x_acf10",      "diff1_acf1", "diff1_acf10",
                                                 "diff2_acf1", "diff2_acf10", "seas_acf1",    "x_pacf5",    "diff1x_pacf5",
                                                 "diff2x_pacf5", "seas_pacf", "e_acf1",       "e_acf10",    "trend",
                                                 "seasonal_strength", "nonlinearity"};
    std::vector<std::string> out;
    for (const auto& name : all)
        if (std::find(reg.names.begin(), reg.names.end(), name) != reg.names.end()) out.push_back(name);
    return out;
}

struct FeatureVector {
    std::shared_ptr<const FeatureRegistry> registry;
    std::vector<double> values;     ///< registry order, always finite
    std::size_t replaced = 0;       ///< non-finite values mapped to 0

    double operator[](const std::string& name) const { return values.at(registry->index_of(name)); }
};

namespace features_detail {

inline double max_abs(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s = std::max(s, std::abs(v));
    return s;
}

// Range within 1e-10 of the larger of the series' own magnitude and `ref_scale`
// (the magnitude of the series a derived sequence came from).
inline bool nearly_constant(std::span<const double> x, double ref_scale = 0.0) {
    if (x.empty()) return true;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return (*hi - *lo) <= 1e-10 * std::max(max_abs(x), ref_scale);
}

inline double nan() { return std::nan(""); }

// ACF of x with NaN for numerically constant input.
inline std::vector<double> acf_guarded(std::span<const double> x, std::size_t max_lag, double ref_scale = 0.0) {
    if (nearly_constant(x, ref_scale)) return std::vector<double>(max_lag, nan());
    return detail::acf(x, max_lag);
}

inline std::vector<double> pacf_guarded(std::span<const double> x, std::size_t max_lag, double ref_scale = 0.0) {
    if (nearly_constant(x, ref_scale)) return std::vector<double>(max_lag, nan());
    return detail::pacf(x, max_lag);
}

// Sum of squares of the first `count` coefficients that exist (finite lags below the length).
inline double sum_sq_first(const std::vector<double>& coeffs, std::size_t count, std::size_t available) {
    double s = 0.0;
    const std::size_t upto = std::min(count, available);
    if (upto == 0) return nan();
    for (std::size_t k = 0; k < upto; ++k) s += coeffs[k] * coeffs[k];
    return s;
}

/// Normalised spectral entropy of the periodogram over Fourier frequencies 1..floor(n/2).
inline double spectral_entropy(std::span<const double> x) {
    const std::size_t n = x.size();
    const double mu = detail::mean(x);
    const std::size_t kmax = n / 2;
    std::vector<double> power(kmax, 0.0);
    double total = 0.0;
    for (std::size_t k = 1; k <= kmax; ++k) {
        double re = 0.0, im = 0.0;
        const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            re += (x[t] - mu) * std::cos(w * static_cast<double>(t));
            im -= (x[t] - mu) * std::sin(w * static_cast<double>(t));
        }
        power[k - 1] = re * re + im * im;
        total += power[k - 1];
    }
    if (kmax < 2 || !(total > 0.0)) return 1.0;
    double h = 0.0;
    for (double p : power) {
        const double q = p / total;
        if (q > 0.0) h -= q * std::log(q);
    }
    return h / std::log(static_cast<double>(kmax));
}

struct Tiles {
    double lumpiness = 0.0;
    double stability = 0.0;
};

/// Variance of variances (lumpiness) and of means (stability) over non-overlapping tiles.
inline Tiles tiled_variance(std::span<const double> x, std::size_t width = 10) {
    Tiles t;
    if (x.size() < 2 * width) return t;
    std::vector<double> vars, means;
    for (std::size_t lo = 0; lo + width <= x.size(); lo += width) {
        auto tile = x.subspan(lo, width);
        vars.push_back(detail::variance(tile));
        means.push_back(detail::mean(tile));
    }
    t.lumpiness = detail::variance(vars);
    t.stability = detail::variance(means);
    return t;
}

/// Rescaled-range Hurst exponent: slope of log(R/S) on log(window) over windows 8, 16, ... <= n/2.
inline double hurst_rs(std::span<const double> x) {
    std::vector<double> lw, lrs;
    for (std::size_t w = 8; w <= x.size() / 2; w *= 2) {
        double acc = 0.0;
        std::size_t blocks = 0;
        for (std::size_t lo = 0; lo + w <= x.size(); lo += w) {
            auto b = x.subspan(lo, w);
            const double mu = detail::mean(b);
            double z = 0.0, zmin = 0.0, zmax = 0.0, ss = 0.0;
            for (double v : b) {
                z += v - mu;
                zmin = std::min(zmin, z);
                zmax = std::max(zmax, z);
                ss += (v - mu) * (v - mu);
            }
            const double sd = std::sqrt(ss / static_cast<double>(w));
            if (sd > 0.0 && !nearly_constant(b)) {
                acc += (zmax - zmin) / sd;
                ++blocks;
            }
        }
        if (blocks > 0 && acc > 0.0) {
            lw.push_back(std::log(static_cast<double>(w)));
            lrs.push_back(std::log(acc / static_cast<double>(blocks)));
        }
    }
    if (lw.size() < 2) return nan();
    const double mx = detail::mean(lw), my = detail::mean(lrs);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
        sxy += (lw[i] - mx) * (lrs[i] - my);
        sxx += (lw[i] - mx) * (lw[i] - mx);
    }
    return sxy / sxx;
}

inline std::size_t trend_window(std::size_t n) {
    const double quarter = static_cast<double>(n) / 4.0;
    // nearest odd integer to n/4, clamped to [3, 13]
    auto w = static_cast<long>(2.0 * std::round((quarter - 1.0) / 2.0) + 1.0);
    return static_cast<std::size_t>(std::clamp<long>(w, 3, 13));
}

struct Decomposition {
    std::vector<double> trend, seasonal, remainder;
};

/// Centred moving-average trend. Near the ends the window shrinks
/// symmetrically, so linear series are reproduced exactly. With a seasonal
/// period above 1 the seasonal term is the centred phase mean of the detrended series.
inline Decomposition decompose(std::span<const double> x, std::size_t period) {
    const std::size_t n = x.size();
    const std::size_t half = trend_window(n) / 2;
    Decomposition d;
    d.trend.resize(n);
    d.seasonal.assign(n, 0.0);
    d.remainder.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t k = std::min({half, t, n - 1 - t});
        double s = 0.0;
        for (std::size_t j = t - k; j <= t + k; ++j) s += x[j];
        d.trend[t] = s / static_cast<double>(2 * k + 1);
    }
    if (period > 1 && period < n) {
        std::vector<double> phase_sum(period, 0.0);
        std::vector<std::size_t> phase_count(period, 0);
        for (std::size_t t = 0; t < n; ++t) {
            phase_sum[t % period] += x[t] - d.trend[t];
            ++phase_count[t % period];
        }
        double centre = 0.0;
        for (std::size_t p = 0; p < period; ++p) {
            phase_sum[p] /= static_cast<double>(phase_count[p]);
            centre += phase_sum[p];
        }
        centre /= static_cast<double>(period);
        for (std::size_t t = 0; t < n; ++t) d.seasonal[t] = phase_sum[t % period] - centre;
    }
    for (std::size_t t = 0; t < n; ++t) d.remainder[t] = x[t] - d.trend[t] - d.seasonal[t];
    return d;
}

/// Leave-one-out variance spread of the remainder.
inline double spike(std::span<const double> r) {
    const std::size_t n = r.size();
    if (n < 4) return nan();
    double s1 = 0.0, s2 = 0.0;
    for (double v : r) {
        s1 += v;
        s2 += v * v;
    }
    std::vector<double> loo(n);
    const double nm1 = static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = s1 - r[i];
        loo[i] = std::max(0.0, (s2 - r[i] * r[i] - a * a / nm1) / (nm1 - 1.0));
    }
    return detail::variance(loo);
}

struct Curve {
    double linearity = 0.0;
    double curvature = 0.0;
};

/// Coefficients of the trend on orthonormal polynomials of degree 1 and 2.
inline Curve polynomial_shape(std::span<const double> trend) {
    const auto n = static_cast<Eigen::Index>(trend.size());
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
    Eigen::VectorXd p1 = t.array() - t.mean();
    p1.normalize();
    Eigen::VectorXd p2 = (t.array() - t.mean()).square().matrix();
    p2.array() -= p2.mean();
    p2 -= p2.dot(p1) * p1;
    p2.normalize();
    Eigen::Map<const Eigen::VectorXd> y(trend.data(), n);
    return Curve{p1.dot(y), p2.dot(y)};
}

/// Teräsvirta neural-network test (lag 1, chi-square form) on the standardised
/// series, reported as 10 * statistic / n.
inline double nonlinearity(std::span<const double> x) {
    const std::size_t n = x.size();
    if (nearly_constant(x) || n < 8) return nan();
    const double mu = detail::mean(x), sd = std::sqrt(detail::variance(x));
    const auto rows = static_cast<Eigen::Index>(n - 1);
    Eigen::MatrixXd X0(rows, 2), X1(rows, 4);
    Eigen::VectorXd y(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double lag = (x[static_cast<std::size_t>(r)] - mu) / sd;
        y(r) = (x[static_cast<std::size_t>(r) + 1] - mu) / sd;
        X0.row(r) << 1.0, lag;
        X1.row(r) << 1.0, lag, lag * lag, lag * lag * lag;
    }
    const auto base = detail::least_squares(X0, y);
    const double sse0 = base.residuals.squaredNorm();
    if (!(sse0 > 1e-12 * static_cast<double>(rows))) return 0.0;
    const auto aux = detail::least_squares(X1, base.residuals);
    const double sse1 = aux.residuals.squaredNorm();
    if (!(sse1 > 0.0)) return nan();
    const double stat = static_cast<double>(rows) * std::log(sse0 / sse1);
    return 10.0 * stat / static_cast<double>(n);
}

/// R^2 of the ARCH LM auxiliary regression of squared demeaned values on 12 lags.
inline double arch_lm(std::span<const double> x, std::size_t lags = 12) {
    const std::size_t n = x.size();
    if (n <= 2 * lags + 1 || nearly_constant(x)) return nan();
    const double mu = detail::mean(x);
    std::vector<double> z(n);
    for (std::size_t t = 0; t < n; ++t) z[t] = (x[t] - mu) * (x[t] - mu);
    const auto rows = static_cast<Eigen::Index>(n - lags);
    Eigen::MatrixXd X(rows, static_cast<Eigen::Index>(lags + 1));
    Eigen::VectorXd y(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t t = static_cast<std::size_t>(r) + lags;
        y(r) = z[t];
        X(r, 0) = 1.0;
        for (std::size_t j = 1; j <= lags; ++j) X(r, static_cast<Eigen::Index>(j)) = z[t - j];
    }
    const double sst = (y.array() - y.mean()).square().sum();
    if (!(sst > 0.0)) return nan();
    const auto fit = detail::least_squares(X, y);
    return std::clamp(1.0 - fit.residuals.squaredNorm() / sst, 0.0, 1.0);
}

/// KPSS level-stationarity statistic with Bartlett long-run variance, lag trunc(4 (n/100)^0.25).
inline double kpss(std::span<const double> x) {
    const std::size_t n = x.size();
    if (nearly_constant(x)) return nan();
    const double mu = detail::mean(x);
    std::vector<double> e(n);
    for (std::size_t t = 0; t < n; ++t) e[t] = x[t] - mu;
    const auto lag = static_cast<std::size_t>(std::trunc(4.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
    const double nd = static_cast<double>(n);
    double s2 = 0.0;
    for (double v : e) s2 += v * v;
    s2 /= nd;
    for (std::size_t s = 1; s <= lag && s < n; ++s) {
        double c = 0.0;
        for (std::size_t t = s; t < n; ++t) c += e[t] * e[t - s];
        s2 += 2.0 * (1.0 - static_cast<double>(s) / static_cast<double>(lag + 1)) * c / nd;
    }
    double partial = 0.0, acc = 0.0;
    for (double v : e) {
        partial += v;
        acc += partial * partial;
    }
    if (!(s2 > 0.0)) return nan();
    return acc / (nd * nd * s2);
}

/// Largest absolute change between rolling variances `width` periods apart.
inline double max_var_shift(std::span<const double> x, std::size_t width = 10) {
    if (x.size() < 2 * width) return 0.0;
    std::vector<double> rv;
    for (std::size_t t = 0; t + width <= x.size(); ++t) rv.push_back(detail::variance(x.subspan(t, width)));
    double best = 0.0;
    for (std::size_t t = width; t < rv.size(); ++t) best = std::max(best, std::abs(rv[t] - rv[t - width]));
    return best;
}

/**
 * Fluctuation analysis of the cumulative sum: range of linearly detrended
 * blocks at log-spaced scales 5..n/2, then the breakpoint of a two-segment
 * line fit to log F against log scale. Returns the share of scales before
 * the breakpoint; 0 when fewer than 12 distinct scales exist.
 */
inline double fluctanal_prop_r1(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> y(n);
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) y[t] = acc += x[t];
    const double hi = std::floor(static_cast<double>(n) / 2.0);
    std::vector<std::size_t> taus;
    if (hi >= 5.0) {
        constexpr int steps = 50;
        for (int i = 0; i < steps; ++i) {
            const double l = std::log(5.0) + (std::log(hi) - std::log(5.0)) * i / (steps - 1);
            const auto tau = static_cast<std::size_t>(std::round(std::exp(l)));
            if (taus.empty() || taus.back() != tau) taus.push_back(tau);
        }
    }
    constexpr std::size_t min_points = 6;
    if (taus.size() < 2 * min_points) return 0.0;

    std::vector<double> log_tau, log_f;
    for (auto tau : taus) {
        const auto ti = static_cast<Eigen::Index>(tau);
        Eigen::MatrixXd design(ti, 2);
        for (Eigen::Index j = 0; j < ti; ++j) design.row(j) << 1.0, static_cast<double>(j + 1);
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        double sum_sq = 0.0;
        std::size_t blocks = 0;
        for (std::size_t lo = 0; lo + tau <= n; lo += tau) {
            Eigen::Map<const Eigen::VectorXd> blk(y.data() + lo, ti);
            const Eigen::VectorXd res = blk - design * qr.solve(Eigen::VectorXd(blk));
            const double range = res.maxCoeff() - res.minCoeff();
            sum_sq += range * range;
            ++blocks;
        }
        const double f = std::sqrt(sum_sq / static_cast<double>(blocks));
        if (!(f > 0.0)) return nan();
        log_tau.push_back(std::log(static_cast<double>(tau)));
        log_f.push_back(std::log(f));
    }

    auto line_residual_norm = [&](std::size_t lo, std::size_t hi_incl) {
        const std::size_t cnt = hi_incl - lo + 1;
        double mx = 0.0, my = 0.0;
        for (std::size_t i = lo; i <= hi_incl; ++i) {
            mx += log_tau[i];
            my += log_f[i];
        }
        mx /= static_cast<double>(cnt);
        my /= static_cast<double>(cnt);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = lo; i <= hi_incl; ++i) {
            sxy += (log_tau[i] - mx) * (log_f[i] - my);
            sxx += (log_tau[i] - mx) * (log_tau[i] - mx);
        }
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        double ss = 0.0;
        for (std::size_t i = lo; i <= hi_incl; ++i) {
            const double r = log_f[i] - (my + slope * (log_tau[i] - mx));
            ss += r * r;
        }
        return std::sqrt(ss);
    };
    const std::size_t ntt = log_tau.size();
    std::size_t best_i = min_points;
    double best = std::numeric_limits<double>::infinity();
    // i is a 1-based breakpoint shared by both segments
    for (std::size_t i = min_points; i <= ntt - min_points; ++i) {
        const double err = line_residual_norm(0, i - 1) + line_residual_norm(i - 1, ntt - 1);
        if (err < best) {
            best = err;
            best_i = i;
        }
    }
    return static_cast<double>(best_i) / static_cast<double>(ntt);
}

} // namespace features_detail

/**
 * Computes the registry features of one series (length >= 12).
 *
 * Degenerate inputs never fail: a value that cannot be computed (zero
 * variance, too few points for a regression, ...) is reported as 0 and
 * counted in `replaced`. A numerically constant series maps to 0 everywhere
 * except entropy, which is 1 (flat spectrum), and the passthroughs.
 */
inline FeatureVector compute_features(std::span<const double> series, std::size_t seasonal_period = 1) {
    namespace fd = features_detail;
    if (series.size() < 12)
        throw ValidationError("compute_features: need at least 12 observations, got " + std::to_string(series.size()));
    for (double v : series)
        if (!std::isfinite(v)) throw ValidationError("compute_features: missing or non-finite value");

    FeatureVector out;
    out.registry = feature_registry(seasonal_period);
    const auto& reg = *out.registry;
    out.values.assign(reg.size(), 0.0);
    auto set = [&](const char* name, double v) { out.values[reg.index_of(name)] = v; };
    const bool seasonal = seasonal_period > 1;
    const std::size_t n = series.size();

    if (fd::nearly_constant(series)) {
        set("entropy", 1.0);
        set("nperiods", seasonal ? 1.0 : 0.0);
        set("seasonal_period", static_cast<double>(seasonal_period));
        out.replaced = reg.size() - 3;
        return out;
    }

    const auto x = series;
    const double scale = fd::max_abs(x);
    const auto d1 = detail::diff(x);
    const auto d2 = detail::diff(d1);

    set("entropy", fd::spectral_entropy(x));
    const auto tiles = fd::tiled_variance(x);
    set("lumpiness", tiles.lumpiness);
    set("stability", tiles.stability);
    set("hurst", fd::hurst_rs(x));

    const std::size_t acf_lags = std::max<std::size_t>(10, seasonal ? seasonal_period : 0);
    const auto ax = fd::acf_guarded(x, acf_lags);
    const auto a1 = fd::acf_guarded(d1, 10, scale);
    const auto a2 = fd::acf_guarded(d2, 10, scale);
    set("x_acf1", ax[0]);
    set("x_acf10", fd::sum_sq_first(ax, 10, n - 1));
    set("diff1_acf1", a1[0]);
    set("diff1_acf10", fd::sum_sq_first(a1, 10, d1.size() - 1));
    set("diff2_acf1", a2[0]);
    set("diff2_acf10", fd::sum_sq_first(a2, 10, d2.size() - 1));
    if (seasonal) set("seas_acf1", seasonal_period < n ? ax[seasonal_period - 1] : fd::nan());

    const std::size_t pacf_lags = std::max<std::size_t>(5, seasonal ? seasonal_period : 0);
    const auto px = fd::pacf_guarded(x, pacf_lags);
    set("x_pacf5", fd::sum_sq_first(px, 5, n - 1));
    set("diff1x_pacf5", fd::sum_sq_first(fd::pacf_guarded(d1, 5, scale), 5, d1.size() - 1));
    set("diff2x_pacf5", fd::sum_sq_first(fd::pacf_guarded(d2, 5, scale), 5, d2.size() - 1));
    if (seasonal) set("seas_pacf", seasonal_period < n ? px[seasonal_period - 1] : fd::nan());

    const auto dec = fd::decompose(x, seasonal_period);
    const auto ae = fd::acf_guarded(dec.remainder, 10, scale);
    set("e_acf1", ae[0]);
    set("e_acf10", fd::sum_sq_first(ae, 10, n - 1));
    std::vector<double> deseason(n), detrend(n);
    for (std::size_t t = 0; t < n; ++t) {
        deseason[t] = x[t] - dec.seasonal[t];
        detrend[t] = x[t] - dec.trend[t];
    }
    const double var_r = detail::variance(dec.remainder);
    set("trend", fd::nearly_constant(deseason, scale) ? fd::nan() : std::max(0.0, 1.0 - var_r / detail::variance(deseason)));
    if (seasonal)
        set("seasonal_strength",
            fd::nearly_constant(detrend, scale) ? fd::nan() : std::max(0.0, 1.0 - var_r / detail::variance(detrend)));
    set("spike", fd::nearly_constant(dec.remainder, scale) ? 0.0 : fd::spike(dec.remainder));
    const auto shape = fd::polynomial_shape(dec.trend);
    set("linearity", shape.linearity);
    set("curvature", shape.curvature);

    set("nonlinearity", fd::nonlinearity(x));
    set("arch_lm", fd::arch_lm(x));
    set("unitroot_kpss", fd::kpss(x));
    set("max_var_shift", fd::max_var_shift(x));
    set("fluctanal_prop_r1", fd::fluctanal_prop_r1(x));
    set("nperiods", seasonal ? 1.0 : 0.0);
    set("seasonal_period", static_cast<double>(seasonal_period));

    for (double& v : out.values) {
        if (!std::isfinite(v)) {
            v = 0.0;
            ++out.replaced;
        }
    }
    return out;
}

/// Level means of the registry features, flattened level-major for the classifier.
struct FeatureMatrix {
    std::string hierarchy_id;
    std::size_t origin = 0;
    std::shared_ptr<const FeatureRegistry> registry;
    Eigen::MatrixXd level_means;          ///< k x z
    std::vector<double> row;              ///< k * z, level-major
    std::vector<FeatureVector> per_series;
    std::size_t replaced = 0;

    static std::vector<std::string> column_names(const FeatureRegistry& reg, std::size_t levels) {
        std::vector<std::string> cols;
        for (std::size_t l = 0; l < levels; ++l)
            for (const auto& name : reg.names) cols.push_back(name + "_L" + std::to_string(l));
        return cols;
    }
};

inline FeatureMatrix feature_matrix(const HierSeriesSet& data, std::size_t origin, std::size_t seasonal_period = 1,
                                    std::size_t jobs = 1) {
    if (origin < 12) throw ValidationError("feature_matrix: origin must be >= 12");
    if (origin > data.periods()) throw ValidationError("feature_matrix: origin beyond observed periods");
    const auto& h = data.tree();
    FeatureMatrix fm;
    fm.hierarchy_id = data.id;
    fm.origin = origin;
    fm.registry = feature_registry(seasonal_period);
    fm.per_series.resize(h.m());
    detail::parallel_for(h.m(), jobs, [&](std::size_t i) {
        std::vector<double> y(origin);
        for (std::size_t t = 0; t < origin; ++t)
            y[t] = data.observations(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
        fm.per_series[i] = compute_features(y, seasonal_period);
    });
    const auto z = static_cast<Eigen::Index>(fm.registry->size());
    const auto rows = h.rows_by_level();
    fm.level_means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h.levels()), z);
    for (std::size_t l = 0; l < rows.size(); ++l) {
        for (auto i : rows[l])
            for (Eigen::Index f = 0; f < z; ++f) fm.level_means(static_cast<Eigen::Index>(l), f) += fm.per_series[i].values[static_cast<std::size_t>(f)];
        fm.level_means.row(static_cast<Eigen::Index>(l)) /= static_cast<double>(rows[l].size());
    }
    for (Eigen::Index l = 0; l < fm.level_means.rows(); ++l)
        for (Eigen::Index f = 0; f < z; ++f) fm.row.push_back(fm.level_means(l, f));
    for (const auto& fv : fm.per_series) fm.replaced += fv.replaced;
    return fm;
}

} // namespace hfselect
