#pragma once

#include "hfselect/detail/log.hpp"
#include "hfselect/error.hpp"
#include "hfselect/hierarchy.hpp"
#include "hfselect/tsmodel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace hfselect {

/// Reconciliation method. The integer values double as classifier labels.
enum class Method : int { bu = 0, td = 1, com = 2 };

inline constexpr std::array<Method, 3> all_methods{Method::bu, Method::td, Method::com};

inline const char* to_string(Method m) {
    switch (m) {
    case Method::bu: return "BU";
    case Method::td: return "TD";
    case Method::com: return "COM";
    }
    return "?";
}

/// Accepts the report tags (BU, TD, COM) and the CLI spellings (bu, td, mint, com).
inline Method method_from_string(const std::string& s) {
    if (s == "BU" || s == "bu") return Method::bu;
    if (s == "TD" || s == "td") return Method::td;
    if (s == "COM" || s == "com" || s == "mint" || s == "MinT") return Method::com;
    throw ValidationError("unknown reconciliation method '" + s + "'");
}

/// Maps m base forecasts to m_k bottom values (m_k x m).
struct GMatrix {
    Method method = Method::bu;
    Eigen::MatrixXd g;
    std::optional<double> lambda;     ///< shrinkage weight, COM only
    std::vector<double> proportions;  ///< disaggregation proportions, TD only
    std::vector<std::string> warnings;
};

struct ShrinkageEstimate {
    Eigen::MatrixXd w1;       ///< one-step error covariance (uncentred, divisor r)
    Eigen::VectorXd w1_diag;
    double lambda = 1.0;
    Eigen::MatrixXd shrunk;   ///< lambda * diag(w1) + (1 - lambda) * w1
    std::vector<std::string> warnings;
};

inline GMatrix g_bottom_up(const Hierarchy& h) {
    const auto m = static_cast<Eigen::Index>(h.m());
    const auto mk = static_cast<Eigen::Index>(h.m_bottom());
    GMatrix out;
    out.method = Method::bu;
    out.g = Eigen::MatrixXd::Zero(mk, m);
    out.g.rightCols(mk).setIdentity();
    return out;
}

/// Top-down with proportions of historical averages over periods 1..origin.
inline GMatrix g_top_down(const Hierarchy& h, const HierSeriesSet& data, std::size_t origin) {
    if (origin == 0 || origin > data.periods()) throw ValidationError("g_top_down: origin outside observed periods");
    const auto m = static_cast<Eigen::Index>(h.m());
    const auto mk = static_cast<Eigen::Index>(h.m_bottom());
    const auto cols = static_cast<Eigen::Index>(origin);
    const auto first = static_cast<Eigen::Index>(h.first_bottom());
    GMatrix out;
    out.method = Method::td;
    out.g = Eigen::MatrixXd::Zero(mk, m);
    const double total = data.observations.row(0).head(cols).sum();
    out.proportions.resize(static_cast<std::size_t>(mk));
    if (total == 0.0 || !std::isfinite(total)) {
        std::fill(out.proportions.begin(), out.proportions.end(), 1.0 / static_cast<double>(mk));
        out.warnings.push_back("zero historical total; using uniform proportions");
        log::warn("g_top_down: zero historical total for '" + data.id + "', falling back to uniform proportions");
    } else {
        for (Eigen::Index j = 0; j < mk; ++j)
            out.proportions[static_cast<std::size_t>(j)] = data.observations.row(first + j).head(cols).sum() / total;
    }
    for (Eigen::Index j = 0; j < mk; ++j) out.g(j, 0) = out.proportions[static_cast<std::size_t>(j)];
    return out;
}

/**
 * Diagonal-target shrinkage of the one-step residual covariance.
 *
 * The covariance is the uncentred cross-product E E' / r. The weight is
 *   lambda = sum_{i!=j} Var(r_ij) / sum_{i!=j} r_ij^2
 * with Var(r_ij) = (sum_t w_ijt^2 - (sum_t w_ijt)^2 / r) / (r (r - 1)) and
 * w_ijt the product of standardised residuals i and j at time t. lambda is
 * clamped to [0, 1]; it is 1 when every sample correlation is zero.
 */
inline ShrinkageEstimate shrinkage_estimate(const Eigen::MatrixXd& residuals,
                                            std::optional<double> lambda_override = std::nullopt) {
    const Eigen::Index m = residuals.rows();
    const Eigen::Index r = residuals.cols();
    if (r < 2) throw ValidationError("shrinkage_estimate: need at least 2 residual columns");
    if (!residuals.allFinite()) throw ValidationError("shrinkage_estimate: non-finite residuals");
    ShrinkageEstimate est;
    const double rd = static_cast<double>(r);
    est.w1 = residuals * residuals.transpose() / rd;
    est.w1 = (0.5 * (est.w1 + est.w1.transpose())).eval();

    const double mean_diag = est.w1.diagonal().mean();
    Eigen::VectorXd sd = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double v = est.w1(i, i);
        if (v > 0.0) sd(i) = std::sqrt(v);
        const double floor = mean_diag > 0.0 ? 1e-12 * mean_diag : 1.0;
        if (!(v >= floor)) {
            est.w1(i, i) = floor;
            est.warnings.push_back("zero residual variance in row " + std::to_string(i) + "; diagonal floored");
        }
    }
    est.w1_diag = est.w1.diagonal();

    Eigen::MatrixXd xs = Eigen::MatrixXd::Zero(m, r);
    for (Eigen::Index i = 0; i < m; ++i)
        if (sd(i) > 0.0) xs.row(i) = residuals.row(i) / sd(i);
    const Eigen::MatrixXd cross = xs * xs.transpose();                            // sum_t w_ijt
    const Eigen::MatrixXd sq = xs.array().square().matrix();
    const Eigen::MatrixXd cross_sq = sq * sq.transpose();                          // sum_t w_ijt^2
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const double corr = cross(i, j) / rd;
            num += (cross_sq(i, j) - cross(i, j) * cross(i, j) / rd) / (rd * (rd - 1.0));
            den += corr * corr;
        }
    }
    double lambda = den > 0.0 ? num / den : 1.0;
    if (lambda_override) lambda = *lambda_override;
    est.lambda = std::clamp(lambda, 0.0, 1.0);

    est.shrunk = (1.0 - est.lambda) * est.w1;
    est.shrunk.diagonal() = est.w1_diag;
    return est;
}

/**
 * Trace-minimising G = (S' W^+ S)^{-1} S' W^+ for a given error covariance W.
 * Well-conditioned W (eigenvalue ratio below 1e10) uses a symmetric solve.
 * Otherwise W receives jitter 1e-8 * mean(diag); if that is still not enough
 * an eigendecomposition pseudo-inverse with cutoff 1e-10 * max eigenvalue is used.
 */
inline GMatrix g_from_covariance(const Hierarchy& h, const Eigen::MatrixXd& w) {
    const auto m = static_cast<Eigen::Index>(h.m());
    if (w.rows() != m || w.cols() != m) throw ValidationError("g_from_covariance: W must be m x m");
    GMatrix out;
    out.method = Method::com;
    const Eigen::MatrixXd& s = h.summing();

    auto ill_conditioned = [](const Eigen::VectorXd& eig) {
        const double hi = eig.maxCoeff();
        return !(hi > 0.0) || !(eig.minCoeff() > 1e-10 * hi);
    };
    Eigen::MatrixXd wj = 0.5 * (w + w.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(wj);
    if (ill_conditioned(eig.eigenvalues())) {
        const double jitter = 1e-8 * std::max(wj.diagonal().mean(), 1e-300);
        wj.diagonal().array() += jitter;
        out.warnings.push_back("W nearly singular; added jitter");
        log::warn("g_from_covariance: W nearly singular, adding jitter");
        eig.compute(wj);
    }

    Eigen::MatrixXd winv_s;
    if (!ill_conditioned(eig.eigenvalues())) {
        winv_s = wj.ldlt().solve(s);
    } else {
        out.warnings.push_back("W singular after jitter; using pseudo-inverse");
        const Eigen::VectorXd& ev = eig.eigenvalues();
        const double cutoff = 1e-10 * ev.maxCoeff();
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
        const Eigen::MatrixXd& v = eig.eigenvectors();
        winv_s = v * inv.asDiagonal() * v.transpose() * s;
    }
    const Eigen::MatrixXd a = s.transpose() * winv_s;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive())
        out.g = ldlt.solve(winv_s.transpose());
    else
        out.g = a.completeOrthogonalDecomposition().solve(winv_s.transpose());
    return out;
}

struct MintOptions {
    std::optional<double> lambda_override;
};

inline GMatrix g_mint_shrink(const Hierarchy& h, const Eigen::MatrixXd& residuals, const MintOptions& opts = {}) {
    if (static_cast<std::size_t>(residuals.rows()) != h.m())
        throw ValidationError("g_mint_shrink: residual rows must match hierarchy size");
    auto est = shrinkage_estimate(residuals, opts.lambda_override);
    auto out = g_from_covariance(h, est.shrunk);
    out.lambda = est.lambda;
    out.warnings.insert(out.warnings.begin(), est.warnings.begin(), est.warnings.end());
    return out;
}

/// Builds G for `method` at a forecast origin (TD uses history 1..origin, COM the base residuals).
inline GMatrix build_g(Method method, const HierSeriesSet& data, const BaseForecasts& base) {
    switch (method) {
    case Method::bu: return g_bottom_up(data.tree());
    case Method::td: return g_top_down(data.tree(), data, base.origin);
    case Method::com: return g_mint_shrink(data.tree(), base.residuals);
    }
    throw ValidationError("build_g: unknown method");
}

/// Reconciled forecasts S * G * base (m x h). For TD the top row is pinned to
/// the base top forecast; the disaggregated rows sum to it up to rounding.
inline Eigen::MatrixXd reconcile(const GMatrix& g, const Hierarchy& h, const Eigen::MatrixXd& base) {
    if (static_cast<std::size_t>(g.g.rows()) != h.m_bottom() || static_cast<std::size_t>(g.g.cols()) != h.m())
        throw ValidationError("reconcile: G must be m_k x m");
    if (static_cast<std::size_t>(base.rows()) != h.m()) throw ValidationError("reconcile: base forecasts must have m rows");
    Eigen::MatrixXd out = h.summing() * (g.g * base);
    if (g.method == Method::td) out.row(0) = base.row(0);
    return out;
}

inline Eigen::MatrixXd reconcile(const GMatrix& g, const Hierarchy& h, const BaseForecasts& base) {
    return reconcile(g, h, base.forecasts);
}

/// max |S G S - S| (the unbiasedness constraint).
inline double unbiasedness_error(const GMatrix& g, const Hierarchy& h) {
    const Eigen::MatrixXd& s = h.summing();
    return (s * g.g * s - s).cwiseAbs().maxCoeff();
}

/// max |G S - I|; stricter than the S G S = S form.
inline double projection_error(const GMatrix& g, const Hierarchy& h) {
    const auto mk = static_cast<Eigen::Index>(h.m_bottom());
    return (g.g * h.summing() - Eigen::MatrixXd::Identity(mk, mk)).cwiseAbs().maxCoeff();
}

} // namespace hfselect
