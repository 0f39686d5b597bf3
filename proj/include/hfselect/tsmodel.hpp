#pragma once

#include "hfselect/detail/parallel.hpp"
#include "hfselect/detail/stats.hpp"
#include "hfselect/error.hpp"
#include "hfselect/hierarchy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hfselect {

enum class ModelKind { reg_ar, ar, naive, mean };

inline const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::reg_ar: return "reg_ar";
    case ModelKind::ar: return "ar";
    case ModelKind::naive: return "naive";
    case ModelKind::mean: return "mean";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "reg_ar") return ModelKind::reg_ar;
    if (s == "ar") return ModelKind::ar;
    if (s == "naive") return ModelKind::naive;
    if (s == "mean") return ModelKind::mean;
    throw ValidationError("unknown model kind '" + s + "'");
}

/// Base forecasting model. reg_ar is a price regression with AR(p) errors;
/// ar drops the regressor; naive and mean are benchmarks.
struct BaseModelSpec {
    ModelKind kind = ModelKind::reg_ar;
    std::size_t ar_order = 2;
    bool use_regressor = true;
    double ridge = 0.0;
    bool truncate_nonneg = false;

    bool needs_regressor() const { return kind == ModelKind::reg_ar && use_regressor; }
    std::size_t min_length() const { return std::max<std::size_t>({8, 2 * order() + 2, 4 * order()}); }
    std::size_t order() const { return kind == ModelKind::reg_ar || kind == ModelKind::ar ? ar_order : 0; }
};

struct SeriesForecast {
    std::vector<double> forecasts;
    std::vector<double> residuals;  ///< one-step in-sample errors
    bool ridge_fallback = false;
};

/**
 * Fits one series and forecasts h steps ahead.
 *
 * reg_ar is estimated in two stages: y_t = a + b x_t + u_t by least squares,
 * then u_t = c + sum_j phi_j u_{t-j} + e_t on the regression residuals. The
 * AR intercept keeps the final one-step errors e_t mean-zero. When the model
 * uses the regressor, `regressor` must cover n + h periods.
 */
inline SeriesForecast fit_predict(std::span<const double> series, std::optional<std::span<const double>> regressor,
                                  const BaseModelSpec& spec, std::size_t h) {
    const std::size_t n = series.size();
    if (spec.ridge < 0.0) throw ValidationError("fit_predict: ridge must be non-negative");
    if (n < spec.min_length())
        throw ValidationError("fit_predict: series of length " + std::to_string(n) + " is too short (need " +
                              std::to_string(spec.min_length()) + ")");
    SeriesForecast out;
    out.forecasts.assign(h, 0.0);

    switch (spec.kind) {
    case ModelKind::naive: {
        std::fill(out.forecasts.begin(), out.forecasts.end(), series[n - 1]);
        out.residuals = detail::diff(series);
        break;
    }
    case ModelKind::mean: {
        const double mu = detail::mean(series);
        std::fill(out.forecasts.begin(), out.forecasts.end(), mu);
        out.residuals.reserve(n);
        for (double v : series) out.residuals.push_back(v - mu);
        break;
    }
    case ModelKind::reg_ar:
    case ModelKind::ar: {
        const bool with_x = spec.needs_regressor();
        if (with_x && (!regressor || regressor->size() < n + h))
            throw ValidationError("fit_predict: regressor must cover the " + std::to_string(n + h) +
                                  " training and horizon periods");
        const auto ni = static_cast<Eigen::Index>(n);
        Eigen::MatrixXd X(ni, with_x ? 2 : 1);
        Eigen::VectorXd y(ni);
        for (std::size_t t = 0; t < n; ++t) {
            const auto ti = static_cast<Eigen::Index>(t);
            X(ti, 0) = 1.0;
            if (with_x) X(ti, 1) = (*regressor)[t];
            y(ti) = series[t];
        }
        const auto reg = detail::least_squares(X, y, spec.ridge);
        out.ridge_fallback = reg.ridge_fallback;
        const Eigen::VectorXd& u = reg.residuals;

        const std::size_t p = spec.ar_order;
        Eigen::VectorXd ar_coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
        if (p == 0) {
            out.residuals.assign(u.data(), u.data() + u.size());
        } else {
            const auto rows = static_cast<Eigen::Index>(n - p);
            Eigen::MatrixXd Z(rows, static_cast<Eigen::Index>(p + 1));
            Eigen::VectorXd target(rows);
            for (std::size_t t = p; t < n; ++t) {
                const auto r = static_cast<Eigen::Index>(t - p);
                Z(r, 0) = 1.0;
                for (std::size_t j = 1; j <= p; ++j) Z(r, static_cast<Eigen::Index>(j)) = u(static_cast<Eigen::Index>(t - j));
                target(r) = u(static_cast<Eigen::Index>(t));
            }
            const auto ar = detail::least_squares(Z, target, spec.ridge);
            out.ridge_fallback = out.ridge_fallback || ar.ridge_fallback;
            ar_coef = ar.coef;
            out.residuals.assign(ar.residuals.data(), ar.residuals.data() + ar.residuals.size());
        }

        std::vector<double> path(u.data(), u.data() + u.size());
        for (std::size_t s = 0; s < h; ++s) {
            double next = ar_coef(0);
            for (std::size_t j = 1; j <= p; ++j) next += ar_coef(static_cast<Eigen::Index>(j)) * path[path.size() - j];
            path.push_back(next);
            double level = reg.coef(0);
            if (with_x) level += reg.coef(1) * (*regressor)[n + s];
            out.forecasts[s] = level + next;
        }
        break;
    }
    }
    if (spec.truncate_nonneg)
        for (double& f : out.forecasts) f = std::max(f, 0.0);
    return out;
}

/// Independent base forecasts for every series of a hierarchy (generally incoherent).
struct BaseForecasts {
    Eigen::MatrixXd forecasts;  ///< m x h
    Eigen::MatrixXd residuals;  ///< m x r, common window
    std::size_t origin = 0;     ///< number of observed periods used for fitting
    std::size_t ridge_fallbacks = 0;
};

/**
 * Fits every series on periods 1..origin and forecasts origin+1..origin+h.
 * Regressor values for the horizon come from the data set while they exist;
 * `future_regressors` (m x (origin + h - n)) supplies the rest for live use.
 */
inline BaseForecasts forecast_hierarchy(const HierSeriesSet& data, const BaseModelSpec& spec, std::size_t origin,
                                        std::size_t h, const std::optional<Eigen::MatrixXd>& future_regressors = std::nullopt,
                                        std::size_t jobs = 1) {
    const std::size_t n = data.periods();
    const std::size_t m = data.series();
    if (origin > n) throw ValidationError("forecast_hierarchy: origin beyond observed periods");
    if (origin < spec.min_length())
        throw ValidationError("forecast_hierarchy: origin " + std::to_string(origin) + " below minimum fit length " +
                              std::to_string(spec.min_length()));

    Eigen::MatrixXd xreg;
    if (spec.needs_regressor()) {
        if (!data.regressors) throw ValidationError("forecast_hierarchy: model needs a regressor but '" + data.id + "' has none");
        xreg.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(origin + h));
        const std::size_t known = std::min(n, origin + h);
        xreg.leftCols(static_cast<Eigen::Index>(known)) = data.regressors->leftCols(static_cast<Eigen::Index>(known));
        if (origin + h > n) {
            const auto missing = static_cast<Eigen::Index>(origin + h - n);
            if (!future_regressors || future_regressors->rows() != static_cast<Eigen::Index>(m) ||
                future_regressors->cols() < missing)
                throw ValidationError("forecast_hierarchy: future regressor values required for " +
                                      std::to_string(missing) + " periods beyond the data");
            xreg.rightCols(missing) = future_regressors->leftCols(missing);
        }
    }

    std::vector<SeriesForecast> fits(m);
    detail::parallel_for(m, jobs, [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        std::vector<double> y(origin);
        for (std::size_t t = 0; t < origin; ++t) y[t] = data.observations(row, static_cast<Eigen::Index>(t));
        std::vector<double> x;
        std::optional<std::span<const double>> xs;
        if (spec.needs_regressor()) {
            x.resize(origin + h);
            for (std::size_t t = 0; t < origin + h; ++t) x[t] = xreg(row, static_cast<Eigen::Index>(t));
            xs = std::span<const double>(x);
        }
        try {
            fits[i] = fit_predict(y, xs, spec, h);
        } catch (const Error& e) {
            throw ValidationError("series '" + data.tree().node(i) + "' of '" + data.id + "': " + e.what());
        }
    });

    BaseForecasts out;
    out.origin = origin;
    const auto r = static_cast<Eigen::Index>(fits.front().residuals.size());
    out.forecasts.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(h));
    out.residuals.resize(static_cast<Eigen::Index>(m), r);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t s = 0; s < h; ++s) out.forecasts(row, static_cast<Eigen::Index>(s)) = fits[i].forecasts[s];
        for (Eigen::Index t = 0; t < r; ++t) out.residuals(row, t) = fits[i].residuals[static_cast<std::size_t>(t)];
        out.ridge_fallbacks += fits[i].ridge_fallback ? 1 : 0;
    }
    return out;
}

} // namespace hfselect
