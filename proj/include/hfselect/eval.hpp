#pragma once

#include "hfselect/detail/parallel.hpp"
#include "hfselect/detail/stats.hpp"
#include "hfselect/error.hpp"
#include "hfselect/hierarchy.hpp"
#include "hfselect/reconcile.hpp"
#include "hfselect/tsmodel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace hfselect {

namespace eval_detail {

inline double naive_scale(std::span<const double> insample, bool squared) {
    double s = 0.0;
    for (std::size_t t = 1; t < insample.size(); ++t) {
        const double d = insample[t] - insample[t - 1];
        s += squared ? d * d : std::abs(d);
    }
    return s;
}

inline void check_inputs(std::span<const double> actuals, std::span<const double> forecasts, std::span<const double> insample) {
    if (insample.size() < 2) throw ValidationError("scaled error: in-sample series needs at least 2 points");
    if (actuals.empty()) throw ValidationError("scaled error: horizon must be >= 1");
    if (actuals.size() != forecasts.size()) throw ValidationError("scaled error: actuals and forecasts differ in length");
}

} // namespace eval_detail

/// ((n-1)/h) * sum|y - f| / sum_{t>=2} |y_t - y_{t-1}|. Empty when the in-sample series is constant.
inline std::optional<double> mase(std::span<const double> actuals, std::span<const double> forecasts, std::span<const double> insample) {
    eval_detail::check_inputs(actuals, forecasts, insample);
    const double scale = eval_detail::naive_scale(insample, false);
    if (!(scale > 0.0)) return std::nullopt;
    double err = 0.0;
    for (std::size_t s = 0; s < actuals.size(); ++s) err += std::abs(actuals[s] - forecasts[s]);
    return static_cast<double>(insample.size() - 1) / static_cast<double>(actuals.size()) * err / scale;
}

/// sqrt(((n-1)/h) * sum (y - f)^2 / sum_{t>=2} (y_t - y_{t-1})^2), same guard as mase.
inline std::optional<double> rmsse(std::span<const double> actuals, std::span<const double> forecasts, std::span<const double> insample) {
    eval_detail::check_inputs(actuals, forecasts, insample);
    const double scale = eval_detail::naive_scale(insample, true);
    if (!(scale > 0.0)) return std::nullopt;
    double err = 0.0;
    for (std::size_t s = 0; s < actuals.size(); ++s) err += (actuals[s] - forecasts[s]) * (actuals[s] - forecasts[s]);
    return std::sqrt(static_cast<double>(insample.size() - 1) / static_cast<double>(actuals.size()) * err / scale);
}

enum class Metric { mase, rmsse };

inline const char* to_string(Metric m) { return m == Metric::mase ? "mase" : "rmsse"; }

inline Metric metric_from_string(const std::string& s) {
    if (s == "mase" || s == "MASE") return Metric::mase;
    if (s == "rmsse" || s == "RMSSE") return Metric::rmsse;
    throw ValidationError("unknown metric '" + s + "' (expected mase or rmsse)");
}

/// One scored series at one origin. Degenerate records (constant in-sample
/// series) carry zero scores and are left out of every aggregate.
struct EvalRecord {
    std::string hierarchy_id;
    std::size_t origin = 0;
    std::string node_id;
    std::size_t level = 0;
    std::string method;
    double mase = 0.0;
    double rmsse = 0.0;
    std::size_t h = 0;
    bool degenerate = false;

    double score(Metric m) const { return m == Metric::mase ? mase : rmsse; }
};

/// Origins start, start + step, ... up to `end` inclusive.
inline std::vector<std::size_t> rolling_origins(std::size_t start, std::size_t end, std::size_t step) {
    if (step == 0) throw ValidationError("rolling origins: step must be >= 1");
    std::vector<std::size_t> out;
    for (std::size_t t = start; t <= end; t += step) out.push_back(t);
    return out;
}

/// Scores an m x h forecast matrix for periods origin+1..origin+h against the data.
inline std::vector<EvalRecord> score_forecasts(const HierSeriesSet& data, std::size_t origin, const Eigen::MatrixXd& forecasts,
                                               const std::string& method) {
    const auto h = static_cast<std::size_t>(forecasts.cols());
    if (static_cast<std::size_t>(forecasts.rows()) != data.series()) throw ValidationError("score_forecasts: row count mismatch");
    if (origin + h > data.periods())
        throw ValidationError("score_forecasts: origin " + std::to_string(origin) + " + horizon exceeds observed periods");
    const auto& tree = data.tree();
    std::vector<EvalRecord> out;
    out.reserve(data.series());
    std::vector<double> insample(origin), actual(h), fc(h);
    for (std::size_t i = 0; i < data.series(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t t = 0; t < origin; ++t) insample[t] = data.observations(row, static_cast<Eigen::Index>(t));
        for (std::size_t s = 0; s < h; ++s) {
            actual[s] = data.observations(row, static_cast<Eigen::Index>(origin + s));
            fc[s] = forecasts(row, static_cast<Eigen::Index>(s));
        }
        EvalRecord rec{data.id, origin, tree.node(i), tree.level(i), method, 0.0, 0.0, h, false};
        const auto a = mase(actual, fc, insample);
        const auto b = rmsse(actual, fc, insample);
        if (a && b) {
            rec.mase = *a;
            rec.rmsse = *b;
        } else {
            rec.degenerate = true;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

/// Base forecasts at one origin reconciled with each method, in the order given.
struct OriginResult {
    std::size_t origin = 0;
    BaseForecasts base;
    std::vector<Method> methods;
    std::vector<GMatrix> g;
    std::vector<Eigen::MatrixXd> reconciled;
};

inline OriginResult forecast_origin(const HierSeriesSet& data, const BaseModelSpec& spec, std::span<const Method> methods,
                                    std::size_t origin, std::size_t h) {
    OriginResult out;
    out.origin = origin;
    try {
        out.base = forecast_hierarchy(data, spec, origin, h);
        for (Method m : methods) {
            out.methods.push_back(m);
            out.g.push_back(build_g(m, data, out.base));
            out.reconciled.push_back(reconcile(out.g.back(), data.tree(), out.base));
        }
    } catch (const ValidationError& e) {
        throw ValidationError("origin " + std::to_string(origin) + ": " + e.what());
    } catch (const Error& e) {
        throw RuntimeFailure("origin " + std::to_string(origin) + ": " + e.what());
    }
    return out;
}

/**
 * Rolling-origin evaluation of every method over origins start, start+h, ...,
 * end for each data set. Records are ordered by (data set, origin, node, method).
 */
inline std::vector<EvalRecord> rolling_eval(std::span<const HierSeriesSet> datasets, const BaseModelSpec& spec,
                                            std::span<const Method> methods, std::size_t start, std::size_t end, std::size_t h,
                                            std::size_t jobs = 1) {
    if (methods.empty()) throw ValidationError("rolling_eval: no methods");
    if (start < spec.min_length())
        throw ValidationError("rolling_eval: start " + std::to_string(start) + " below minimum fit length");
    const auto origins = rolling_origins(start, end, h);
    for (const auto& d : datasets)
        if (end + h > d.periods()) throw ValidationError("rolling_eval: end + h exceeds the periods of '" + d.id + "'");
    std::vector<std::vector<EvalRecord>> slots(datasets.size() * origins.size());
    detail::parallel_for(slots.size(), jobs, [&](std::size_t k) {
        const auto& data = datasets[k / origins.size()];
        const std::size_t origin = origins[k % origins.size()];
        const auto res = forecast_origin(data, spec, methods, origin, h);
        std::vector<std::vector<EvalRecord>> per_method;
        for (std::size_t j = 0; j < methods.size(); ++j)
            per_method.push_back(score_forecasts(data, origin, res.reconciled[j], to_string(methods[j])));
        for (std::size_t i = 0; i < data.series(); ++i)
            for (auto& recs : per_method) slots[k].push_back(std::move(recs[i]));
    });
    std::vector<EvalRecord> out;
    for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
    return out;
}

inline std::vector<EvalRecord> rolling_eval(const HierSeriesSet& data, const BaseModelSpec& spec, std::span<const Method> methods,
                                            std::size_t start, std::size_t end, std::size_t h, std::size_t jobs = 1) {
    return rolling_eval(std::span<const HierSeriesSet>(&data, 1), spec, methods, start, end, h, jobs);
}

/**
 * Studentized-range critical values q_alpha / sqrt(2) for K = 2..10 methods
 * (the Nemenyi table). The (0.05, K = 6) entry is 3.219 as used in the
 * reported MCB analysis; the textbook value there is 2.850.
 */
inline double mcb_q(double alpha, std::size_t k) {
    static const std::map<int, std::vector<double>> table = {
        {1, {2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646}},
        {5, {1.960, 2.344, 2.569, 2.728, 3.219, 2.948, 3.031, 3.102, 3.164}},
        {10, {1.645, 2.052, 2.291, 2.460, 2.589, 2.693, 2.780, 2.855, 2.920}},
    };
    const int key = static_cast<int>(std::lround(alpha * 100.0));
    auto it = table.find(key);
    if (it == table.end() || std::abs(alpha * 100.0 - key) > 1e-9)
        throw ValidationError("mcb: alpha must be one of 0.01, 0.05, 0.10 (or pass q explicitly)");
    if (k < 2 || k > 10) throw ValidationError("mcb: tabulated q covers 2..10 methods (pass q explicitly)");
    return it->second[k - 2];
}

/// r = q * sqrt(K (K + 1) / (12 N)).
inline double mcb_critical_difference(double q, std::size_t k, std::size_t n) {
    if (n == 0) throw ValidationError("mcb: no ranked instances");
    const double kd = static_cast<double>(k);
    return q * std::sqrt(kd * (kd + 1.0) / (12.0 * static_cast<double>(n)));
}

struct McbResult {
    std::vector<std::string> methods;
    std::vector<double> mean_rank;
    std::vector<double> lower, upper;   ///< mean rank -/+ r/2
    std::vector<bool> significant;      ///< worse than the best, intervals disjoint
    std::size_t best = 0;
    double q = 0.0;
    double r = 0.0;
    std::size_t n = 0;                  ///< ranked instances
    std::size_t excluded = 0;           ///< degenerate instances left out
};

/// Ranks within each row (1 = lowest score, ties averaged), then builds the MCB intervals.
inline McbResult mcb_from_scores(const Eigen::MatrixXd& scores, std::vector<std::string> methods, double q) {
    const auto k = static_cast<std::size_t>(scores.cols());
    if (k < 2) throw ValidationError("mcb: need at least 2 methods");
    if (methods.size() != k) throw ValidationError("mcb: method names do not match score columns");
    if (!(q > 0.0)) throw ValidationError("mcb: q must be positive");
    McbResult out;
    out.methods = std::move(methods);
    out.q = q;
    out.n = static_cast<std::size_t>(scores.rows());
    out.r = mcb_critical_difference(q, k, out.n);
    out.mean_rank.assign(k, 0.0);
    std::vector<std::size_t> idx(k);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return scores(i, static_cast<Eigen::Index>(a)) < scores(i, static_cast<Eigen::Index>(b));
        });
        for (std::size_t a = 0; a < k;) {
            std::size_t b = a;
            while (b + 1 < k && scores(i, static_cast<Eigen::Index>(idx[b + 1])) == scores(i, static_cast<Eigen::Index>(idx[a]))) ++b;
            const double rank = 0.5 * static_cast<double>(a + b) + 1.0;
            for (std::size_t c = a; c <= b; ++c) out.mean_rank[idx[c]] += rank;
            a = b + 1;
        }
    }
    for (double& v : out.mean_rank) v /= static_cast<double>(out.n);
    out.best = static_cast<std::size_t>(std::min_element(out.mean_rank.begin(), out.mean_rank.end()) - out.mean_rank.begin());
    for (std::size_t j = 0; j < k; ++j) {
        out.lower.push_back(out.mean_rank[j] - out.r / 2.0);
        out.upper.push_back(out.mean_rank[j] + out.r / 2.0);
    }
    for (std::size_t j = 0; j < k; ++j) out.significant.push_back(j != out.best && out.lower[j] > out.upper[out.best]);
    return out;
}

/**
 * MCB over evaluation records, one ranked instance per (hierarchy, origin,
 * node). Every instance must be scored by every method. Degenerate instances
 * are excluded and counted. Methods appear in order of first occurrence.
 */
inline McbResult mcb_test(std::span<const EvalRecord> records, double alpha, Metric metric,
                          std::optional<double> q_override = std::nullopt) {
    std::vector<std::string> methods;
    for (const auto& r : records)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (methods.size() < 2) throw ValidationError("mcb: need at least 2 methods");
    using Key = std::tuple<std::string, std::size_t, std::string>;
    std::map<Key, std::vector<std::optional<double>>> inst;
    std::map<Key, bool> degenerate;
    for (const auto& r : records) {
        Key key{r.hierarchy_id, r.origin, r.node_id};
        auto& row = inst[key];
        row.resize(methods.size());
        const auto j = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), r.method) - methods.begin());
        if (row[j]) throw ValidationError("mcb: duplicate record for method " + r.method);
        row[j] = r.score(metric);
        degenerate[key] = degenerate[key] || r.degenerate;
    }
    std::vector<const std::vector<std::optional<double>>*> rows;
    std::size_t excluded = 0;
    for (const auto& [key, row] : inst) {
        for (std::size_t j = 0; j < methods.size(); ++j)
            if (!row[j])
                throw ValidationError("mcb: method " + methods[j] + " has no score for " + std::get<0>(key) + " origin " +
                                      std::to_string(std::get<1>(key)) + " node " + std::get<2>(key));
        if (degenerate[key]) {
            ++excluded;
            continue;
        }
        rows.push_back(&row);
    }
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(methods.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < methods.size(); ++j) scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *(*rows[i])[j];
    const double q = q_override ? *q_override : mcb_q(alpha, methods.size());
    auto out = mcb_from_scores(scores, methods, q);
    out.excluded = excluded;
    return out;
}

struct ClassMetrics {
    std::vector<double> precision, recall, f1;
    std::vector<std::size_t> support;         ///< actual count per class
    std::vector<std::size_t> predicted;       ///< predicted count per class
    std::vector<bool> no_predictions;         ///< precision reported as 0 by convention
    Eigen::MatrixXi confusion;                ///< rows actual, columns predicted
    double accuracy = 0.0;
};

inline ClassMetrics classifier_metrics(std::span<const int> predicted, std::span<const int> actual, int n_classes = 3) {
    if (predicted.size() != actual.size()) throw ValidationError("classifier_metrics: length mismatch");
    if (predicted.empty()) throw ValidationError("classifier_metrics: empty input");
    const auto k = static_cast<std::size_t>(n_classes);
    ClassMetrics out;
    out.confusion = Eigen::MatrixXi::Zero(n_classes, n_classes);
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i] < 0 || actual[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
            throw ValidationError("classifier_metrics: class index out of range");
        ++out.confusion(actual[i], predicted[i]);
    }
    std::size_t correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        const auto tp = static_cast<std::size_t>(out.confusion(ci, ci));
        const auto pred = static_cast<std::size_t>(out.confusion.col(ci).sum());
        const auto sup = static_cast<std::size_t>(out.confusion.row(ci).sum());
        correct += tp;
        const double p = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
        const double r = sup ? static_cast<double>(tp) / static_cast<double>(sup) : 0.0;
        out.precision.push_back(p);
        out.recall.push_back(r);
        out.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
        out.support.push_back(sup);
        out.predicted.push_back(pred);
        out.no_predictions.push_back(pred == 0);
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(actual.size());
    return out;
}

/// Mean score per (hierarchy, level, method) over origins and nodes, degenerate records excluded.
struct LevelScore {
    std::string hierarchy_id;
    std::size_t level = 0;
    std::string method;
    double score = 0.0;
    std::size_t count = 0;
};

inline std::vector<LevelScore> level_scores(std::span<const EvalRecord> records, Metric metric) {
    std::map<std::tuple<std::string, std::size_t, std::string>, std::pair<double, std::size_t>> acc;
    for (const auto& r : records) {
        if (r.degenerate) continue;
        auto& a = acc[{r.hierarchy_id, r.level, r.method}];
        a.first += r.score(metric);
        ++a.second;
    }
    std::vector<LevelScore> out;
    for (const auto& [key, a] : acc)
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), a.first / static_cast<double>(a.second), a.second});
    return out;
}

struct AccuracyRatio {
    std::string hierarchy_id;
    std::size_t level = 0;
    Metric metric = Metric::mase;
    std::string benchmark;
    double chf = 0.0;
    double bench = 0.0;
    double ratio = 0.0;     ///< chf / bench; below 1 favours CHF
    bool excluded = false;  ///< zero benchmark score
};

/// Ratio of the CHF score to each benchmark per (hierarchy, level, metric).
inline std::vector<AccuracyRatio> accuracy_ratios(std::span<const EvalRecord> records, const std::string& chf_tag = "CHF") {
    std::vector<AccuracyRatio> out;
    for (Metric metric : {Metric::mase, Metric::rmsse}) {
        const auto scores = level_scores(records, metric);
        std::map<std::pair<std::string, std::size_t>, double> chf;
        for (const auto& s : scores)
            if (s.method == chf_tag) chf[{s.hierarchy_id, s.level}] = s.score;
        if (chf.empty()) throw ValidationError("accuracy_ratios: no records tagged " + chf_tag);
        bool any_bench = false;
        for (const auto& s : scores) {
            if (s.method == chf_tag) continue;
            auto it = chf.find({s.hierarchy_id, s.level});
            if (it == chf.end()) continue;
            any_bench = true;
            AccuracyRatio r{s.hierarchy_id, s.level, metric, s.method, it->second, s.score, 0.0, false};
            if (s.score > 0.0)
                r.ratio = it->second / s.score;
            else
                r.excluded = true;
            out.push_back(std::move(r));
        }
        if (!any_bench) throw ValidationError("accuracy_ratios: no benchmark records alongside " + chf_tag);
    }
    return out;
}

struct RatioSummary {
    std::size_t level = 0;
    Metric metric = Metric::mase;
    std::string benchmark;
    double median = 0.0;
    std::size_t count = 0;
};

/// Median ratio per (level, metric, benchmark), excluded ratios left out.
inline std::vector<RatioSummary> ratio_medians(std::span<const AccuracyRatio> ratios) {
    std::map<std::tuple<std::size_t, int, std::string>, std::vector<double>> groups;
    for (const auto& r : ratios)
        if (!r.excluded) groups[{r.level, static_cast<int>(r.metric), r.benchmark}].push_back(r.ratio);
    std::vector<RatioSummary> out;
    for (auto& [key, v] : groups)
        out.push_back({std::get<0>(key), static_cast<Metric>(std::get<1>(key)), std::get<2>(key), detail::median(v), v.size()});
    return out;
}

/**
 * Per-method accuracy by hierarchy level: each cell is the mean over all
 * non-degenerate records at that level, and Average is the mean of the level
 * cells.
 */
struct LevelTable {
    Metric metric = Metric::mase;
    std::vector<std::string> methods;
    std::size_t levels = 0;
    Eigen::MatrixXd cells;  ///< methods x (levels + 1), last column Average

    double at(const std::string& method, std::size_t level) const {
        auto it = std::find(methods.begin(), methods.end(), method);
        if (it == methods.end()) throw ValidationError("level table: unknown method " + method);
        return cells(it - methods.begin(), static_cast<Eigen::Index>(level));
    }
    double average(const std::string& method) const { return at(method, levels); }
};

inline LevelTable level_table(std::span<const EvalRecord> records, Metric metric, std::vector<std::string> methods = {}) {
    if (methods.empty())
        for (const auto& r : records)
            if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    std::size_t levels = 0;
    for (const auto& r : records) levels = std::max(levels, r.level + 1);
    LevelTable t;
    t.metric = metric;
    t.methods = methods;
    t.levels = levels;
    const auto k = static_cast<Eigen::Index>(methods.size());
    const auto l = static_cast<Eigen::Index>(levels);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, l);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(k, l);
    for (const auto& r : records) {
        if (r.degenerate) continue;
        auto it = std::find(methods.begin(), methods.end(), r.method);
        if (it == methods.end()) continue;
        const auto j = it - methods.begin();
        sum(j, static_cast<Eigen::Index>(r.level)) += r.score(metric);
        count(j, static_cast<Eigen::Index>(r.level)) += 1.0;
    }
    t.cells = Eigen::MatrixXd::Zero(k, l + 1);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index c = 0; c < l; ++c) {
            if (count(j, c) == 0.0) throw ValidationError("level table: no scores for " + methods[static_cast<std::size_t>(j)] + " at level " + std::to_string(c));
            t.cells(j, c) = sum(j, c) / count(j, c);
        }
        t.cells(j, l) = t.cells.row(j).head(l).mean();
    }
    return t;
}

} // namespace hfselect
