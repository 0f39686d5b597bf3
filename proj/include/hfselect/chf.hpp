#pragma once

#include "hfselect/detail/log.hpp"
#include "hfselect/detail/parallel.hpp"
#include "hfselect/error.hpp"
#include "hfselect/eval.hpp"
#include "hfselect/features.hpp"
#include "hfselect/gbt.hpp"
#include "hfselect/hierarchy.hpp"
#include "hfselect/reconcile.hpp"
#include "hfselect/tsmodel.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hfselect {

/// How one hierarchy-level score is formed from the per-series MASE values.
enum class LabelObjective {
    unweighted,      ///< plain mean over all m series
    level_weighted,  ///< mean of the per-level means
};

inline const char* to_string(LabelObjective o) { return o == LabelObjective::unweighted ? "unweighted" : "level_weighted"; }

inline LabelObjective label_objective_from_string(const std::string& s) {
    if (s == "unweighted") return LabelObjective::unweighted;
    if (s == "level_weighted") return LabelObjective::level_weighted;
    throw ValidationError("unknown label objective '" + s + "'");
}

struct ChfOptions {
    std::size_t seasonal_period = 1;
    LabelObjective objective = LabelObjective::unweighted;
    std::size_t jobs = 1;
};

/// Scores of the three methods at one (hierarchy, origin), indexed by class label.
struct OriginLabel {
    std::array<double, 3> scores{};
    int label = -1;                          ///< -1 when every series is degenerate
    bool tie = false;
    std::array<std::size_t, 3> series_wins{};
};

namespace chf_detail {

inline constexpr double kTieTolerance = 1e-12;

// Lowest score wins; within the tolerance COM beats BU beats TD.
inline int pick_best(const std::array<double, 3>& s, bool* tie = nullptr) {
    const double best = std::min({s[0], s[1], s[2]});
    int chosen = -1, hits = 0;
    for (int c : {2, 0, 1}) {
        if (s[static_cast<std::size_t>(c)] - best <= kTieTolerance) {
            ++hits;
            if (chosen < 0) chosen = c;
        }
    }
    if (tie) *tie = hits > 1;
    return chosen;
}

} // namespace chf_detail

/// Labels one origin from the three method records (each m long, hierarchy order).
inline OriginLabel label_from_records(const Hierarchy& h, const std::array<std::vector<EvalRecord>, 3>& recs, LabelObjective objective) {
    OriginLabel out;
    const std::size_t m = h.m();
    const auto levels = h.levels();
    std::array<std::vector<double>, 3> level_sum;
    std::vector<double> level_count(levels, 0.0);
    for (auto& v : level_sum) v.assign(levels, 0.0);
    std::size_t scored = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (recs[0][i].degenerate) continue;
        ++scored;
        std::array<double, 3> s{};
        for (std::size_t c = 0; c < 3; ++c) {
            s[c] = recs[c][i].mase;
            out.scores[c] += s[c];
            level_sum[c][h.level(i)] += s[c];
        }
        level_count[h.level(i)] += 1.0;
        ++out.series_wins[static_cast<std::size_t>(chf_detail::pick_best(s))];
    }
    if (scored == 0) return out;
    for (std::size_t c = 0; c < 3; ++c) {
        if (objective == LabelObjective::unweighted) {
            out.scores[c] /= static_cast<double>(scored);
        } else {
            double total = 0.0, used = 0.0;
            for (std::size_t l = 0; l < levels; ++l)
                if (level_count[l] > 0.0) {
                    total += level_sum[c][l] / level_count[l];
                    used += 1.0;
                }
            out.scores[c] = total / used;
        }
    }
    out.label = chf_detail::pick_best(out.scores, &out.tie);
    return out;
}

/// Everything computed for one (hierarchy, origin): features, all three reconciliations and their scores.
struct OriginEvaluation {
    std::string hierarchy_id;
    std::size_t origin = 0;
    FeatureMatrix features;
    OriginResult forecasts;                      ///< methods in label order BU, TD, COM
    std::array<std::vector<EvalRecord>, 3> records;
    OriginLabel label;
};

inline OriginEvaluation evaluate_origin(const HierSeriesSet& data, const BaseModelSpec& spec, std::size_t origin, std::size_t h,
                                        const ChfOptions& opts) {
    OriginEvaluation out;
    out.hierarchy_id = data.id;
    out.origin = origin;
    out.features = feature_matrix(data, origin, opts.seasonal_period);
    out.forecasts = forecast_origin(data, spec, all_methods, origin, h);
    for (std::size_t c = 0; c < 3; ++c) out.records[c] = score_forecasts(data, origin, out.forecasts.reconciled[c], to_string(all_methods[c]));
    out.label = label_from_records(data.tree(), out.records, opts.objective);
    return out;
}

struct TrainingRow {
    std::string hierarchy_id;
    std::size_t origin = 0;
    std::vector<double> features;
    int label = 0;
    std::array<double, 3> scores{};
    bool tie = false;
};

struct ChfTrainingSet {
    std::shared_ptr<const FeatureRegistry> registry;
    std::size_t levels = 0;
    std::vector<TrainingRow> rows;
    std::array<std::size_t, 3> label_counts{};
    std::array<std::size_t, 3> series_wins{};  ///< per-series argmin counts, for comparison with hierarchy labels
    std::size_t ties = 0;
    std::vector<std::string> skipped;          ///< (hierarchy, origin) pairs with only degenerate scores

    std::vector<std::string> columns() const { return FeatureMatrix::column_names(*registry, levels); }

    Eigen::MatrixXd matrix() const {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].features.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t f = 0; f < rows[i].features.size(); ++f)
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = rows[i].features[f];
        return x;
    }

    std::vector<int> labels() const {
        std::vector<int> y;
        for (const auto& r : rows) y.push_back(r.label);
        return y;
    }

    void add(const OriginEvaluation& ev) {
        if (!registry) {
            registry = ev.features.registry;
            levels = static_cast<std::size_t>(ev.features.level_means.rows());
        } else if (registry->tag != ev.features.registry->tag || levels != static_cast<std::size_t>(ev.features.level_means.rows())) {
            throw ValidationError("training set: hierarchy '" + ev.hierarchy_id + "' has a different feature layout");
        }
        for (std::size_t c = 0; c < 3; ++c) series_wins[c] += ev.label.series_wins[c];
        if (ev.label.label < 0) {
            skipped.push_back(ev.hierarchy_id + "@" + std::to_string(ev.origin));
            log::warn("training set: skipping '" + ev.hierarchy_id + "' origin " + std::to_string(ev.origin) + " (all scores degenerate)");
            return;
        }
        rows.push_back({ev.hierarchy_id, ev.origin, ev.features.row, ev.label.label, ev.label.scores, ev.label.tie});
        ++label_counts[static_cast<std::size_t>(ev.label.label)];
        ties += ev.label.tie ? 1 : 0;
    }
};

/// Origins p, p + h, ... whose forecast window ends by period r.
inline std::vector<std::size_t> offline_origins(std::size_t p, std::size_t r, std::size_t h) {
    if (h == 0) throw ValidationError("chf: horizon must be >= 1");
    if (p + h > r) throw ValidationError("chf: no off-line origin fits (need p + h <= r)");
    return rolling_origins(p, r - h, h);
}

/**
 * Off-line phase: for every hierarchy and origin t with t + h <= r, fit on
 * 1..t, reconcile with all three methods, label with the method of lowest
 * mean MASE and record the level-mean features at t.
 */
inline ChfTrainingSet build_training_set(std::span<const HierSeriesSet> datasets, const BaseModelSpec& spec, std::size_t p, std::size_t r,
                                         std::size_t h, const ChfOptions& opts = {}) {
    if (datasets.empty()) throw ValidationError("build_training_set: no hierarchies");
    if (p < spec.min_length() || p < 12)
        throw ValidationError("build_training_set: p = " + std::to_string(p) + " is below the minimum fit length");
    for (const auto& d : datasets)
        if (r > d.periods()) throw ValidationError("build_training_set: r exceeds the periods of '" + d.id + "'");
    const auto origins = offline_origins(p, r, h);
    std::vector<OriginEvaluation> evals(datasets.size() * origins.size());
    detail::parallel_for(evals.size(), opts.jobs, [&](std::size_t k) {
        evals[k] = evaluate_origin(datasets[k / origins.size()], spec, origins[k % origins.size()], h, opts);
    });
    ChfTrainingSet ts;
    for (const auto& ev : evals) ts.add(ev);
    return ts;
}

enum class SelectorPolicy { trained, constant, oracle };

inline const char* to_string(SelectorPolicy p) {
    switch (p) {
    case SelectorPolicy::trained: return "trained";
    case SelectorPolicy::constant: return "constant";
    case SelectorPolicy::oracle: return "oracle";
    }
    return "?";
}

/**
 * Picks a reconciliation method from a feature row. `classes[k]` is the
 * method label behind model class k, so a model trained on a subset of the
 * three methods still reports BU/TD/COM labels.
 */
struct Selector {
    SelectorPolicy policy = SelectorPolicy::trained;
    GbtModel model;
    std::vector<int> classes;
    int constant_label = static_cast<int>(Method::com);
    std::string registry_tag;
    std::size_t width = 0;
    std::vector<std::string> warnings;

    /// Probabilities over BU, TD, COM.
    std::array<double, 3> probabilities(const FeatureMatrix& fm) const {
        check(fm);
        std::array<double, 3> p{};
        if (policy != SelectorPolicy::trained) {
            p[static_cast<std::size_t>(constant_label)] = 1.0;
            return p;
        }
        const auto q = model.predict_proba(fm.row);
        for (std::size_t k = 0; k < q.size(); ++k) p[static_cast<std::size_t>(classes[k])] = q[k];
        return p;
    }

    /// Trained selectors return the model's argmax; the oracle needs the hindsight label.
    Method select(const FeatureMatrix& fm, std::optional<int> hindsight = std::nullopt) const {
        if (policy == SelectorPolicy::oracle) {
            check(fm);
            if (!hindsight || *hindsight < 0) throw ValidationError("oracle selector: no hindsight label");
            return static_cast<Method>(*hindsight);
        }
        if (policy == SelectorPolicy::constant) {
            check(fm);
            return static_cast<Method>(constant_label);
        }
        check(fm);
        const auto q = model.predict_proba(fm.row);
        const auto k = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
        return static_cast<Method>(classes[k]);
    }

    void check(const FeatureMatrix& fm) const {
        if (!registry_tag.empty() && fm.registry->tag != registry_tag)
            throw ValidationError("selector: feature registry '" + fm.registry->tag + "' does not match the selector's '" + registry_tag + "'");
        if (width != 0 && fm.row.size() != width)
            throw ValidationError("selector: feature width " + std::to_string(fm.row.size()) + " does not match " + std::to_string(width));
    }
};

inline Selector constant_selector(Method m, std::string registry_tag = {}, std::size_t width = 0) {
    Selector s;
    s.policy = SelectorPolicy::constant;
    s.constant_label = static_cast<int>(m);
    s.registry_tag = std::move(registry_tag);
    s.width = width;
    return s;
}

inline Selector oracle_selector() {
    Selector s;
    s.policy = SelectorPolicy::oracle;
    return s;
}

/// Trains the gbt classifier on the present classes; a single-class set yields a constant selector.
inline Selector train_selector(const ChfTrainingSet& ts, GbtConfig cfg) {
    if (ts.rows.empty()) throw ValidationError("train_selector: empty training set");
    Selector s;
    s.registry_tag = ts.registry->tag;
    s.width = ts.rows.front().features.size();
    for (int c = 0; c < 3; ++c)
        if (ts.label_counts[static_cast<std::size_t>(c)] > 0) s.classes.push_back(c);
    if (s.classes.size() == 1) {
        s.policy = SelectorPolicy::constant;
        s.constant_label = s.classes.front();
        s.warnings.push_back(std::string("training set holds a single class (") + to_string(static_cast<Method>(s.constant_label)) +
                             "); using a constant selector");
        log::warn("train_selector: " + s.warnings.back());
        return s;
    }
    std::array<int, 3> remap{-1, -1, -1};
    for (std::size_t k = 0; k < s.classes.size(); ++k) remap[static_cast<std::size_t>(s.classes[k])] = static_cast<int>(k);
    std::vector<int> y;
    for (int label : ts.labels()) y.push_back(remap[static_cast<std::size_t>(label)]);
    cfg.n_classes = static_cast<int>(s.classes.size());
    s.model = train(ts.matrix(), y, cfg);
    return s;
}

inline constexpr const char* kSelectorFormat = "hfselect-selector";

inline nlohmann::json selector_to_json(const Selector& s) {
    nlohmann::json j = {{"format", kSelectorFormat},
                        {"version", 1},
                        {"policy", to_string(s.policy)},
                        {"label_encoding", {{"0", "BU"}, {"1", "TD"}, {"2", "COM"}}},
                        {"classes", s.classes},
                        {"constant_label", s.constant_label},
                        {"registry_tag", s.registry_tag},
                        {"width", s.width},
                        {"warnings", s.warnings}};
    if (s.policy == SelectorPolicy::trained) j["model"] = model_to_json(s.model);
    return j;
}

inline Selector selector_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kSelectorFormat) throw ValidationError("selector: unexpected format tag");
        Selector s;
        const auto policy = j.at("policy").get<std::string>();
        if (policy == "trained")
            s.policy = SelectorPolicy::trained;
        else if (policy == "constant")
            s.policy = SelectorPolicy::constant;
        else if (policy == "oracle")
            s.policy = SelectorPolicy::oracle;
        else
            throw ValidationError("selector: unknown policy '" + policy + "'");
        s.classes = j.at("classes").get<std::vector<int>>();
        s.constant_label = j.at("constant_label").get<int>();
        s.registry_tag = j.at("registry_tag").get<std::string>();
        s.width = j.at("width").get<std::size_t>();
        s.warnings = j.at("warnings").get<std::vector<std::string>>();
        if (s.constant_label < 0 || s.constant_label > 2) throw ValidationError("selector: constant label out of range");
        for (int c : s.classes)
            if (c < 0 || c > 2) throw ValidationError("selector: class label out of range");
        if (s.policy == SelectorPolicy::trained) {
            s.model = model_from_json(j.at("model"));
            if (s.model.n_classes() != s.classes.size()) throw ValidationError("selector: class map does not match the model");
            if (s.model.n_features != s.width) throw ValidationError("selector: model width does not match");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("selector: malformed JSON: ") + e.what());
    }
}

struct Selection {
    std::string hierarchy_id;
    std::size_t origin = 0;
    Method method = Method::bu;
    std::array<double, 3> probabilities{};
    int best = -1;  ///< hindsight label once the horizon's actuals are scored
};

struct ReconciledOutput {
    std::string hierarchy_id;
    std::size_t origin = 0;
    Method method = Method::bu;
    Eigen::MatrixXd forecasts;  ///< m x h, hierarchy order
};

struct OnlineOptions {
    bool retrain = true;
    GbtConfig gbt;
    ChfOptions chf;
};

/**
 * On-line phase outcome. `records` holds the CHF records (tag "CHF") followed
 * per origin by the BU, TD and COM benchmark records for the same forecasts.
 */
struct ChfRun {
    Selector selector;                  ///< the selector in force after the last origin
    std::vector<Selection> selections;  ///< (origin, hierarchy) order
    std::vector<ReconciledOutput> forecasts;
    std::vector<EvalRecord> records;
    std::array<std::size_t, 3> series_wins{};
    std::size_t retrains = 0;
    ChfTrainingSet training;            ///< final training set, including rows appended on-line
};

/**
 * On-line phase over origins from, from + h, ..., to. Each origin computes
 * features on 1..t, selects a method, and reconciles the base forecasts with
 * it. With retraining, the rows of the previous origin (now scoreable) are
 * added to the training set and the selector is refit before the next origin.
 */
inline ChfRun run_online(std::span<const HierSeriesSet> datasets, const Selector& selector, const BaseModelSpec& spec, std::size_t from,
                         std::size_t to, std::size_t h, const OnlineOptions& opts = {}, const ChfTrainingSet* training = nullptr) {
    if (datasets.empty()) throw ValidationError("run_online: no hierarchies");
    for (const auto& d : datasets)
        if (to + h > d.periods()) throw ValidationError("run_online: to + h exceeds the periods of '" + d.id + "'");
    const auto origins = rolling_origins(from, to, h);
    const bool retrain = opts.retrain && selector.policy == SelectorPolicy::trained;
    if (retrain && !training) throw ValidationError("run_online: retraining needs the off-line training set");

    ChfRun run;
    run.selector = selector;
    if (training) run.training = *training;
    std::vector<OriginEvaluation> previous;
    for (std::size_t k = 0; k < origins.size(); ++k) {
        const std::size_t origin = origins[k];
        if (retrain && !previous.empty()) {
            for (const auto& ev : previous) run.training.add(ev);
            run.selector = train_selector(run.training, opts.gbt);
            ++run.retrains;
        }
        std::vector<OriginEvaluation> evals(datasets.size());
        std::vector<Selection> sel(datasets.size());
        detail::parallel_for(datasets.size(), opts.chf.jobs, [&](std::size_t d) {
            evals[d] = evaluate_origin(datasets[d], spec, origin, h, opts.chf);
            const auto& ev = evals[d];
            sel[d] = {ev.hierarchy_id, origin, run.selector.select(ev.features, ev.label.label), {}, ev.label.label};
            sel[d].probabilities = run.selector.probabilities(ev.features);
        });
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            const auto& ev = evals[d];
            const auto c = static_cast<std::size_t>(sel[d].method);
            run.forecasts.push_back({ev.hierarchy_id, origin, sel[d].method, ev.forecasts.reconciled[c]});
            for (auto rec : ev.records[c]) {
                rec.method = "CHF";
                run.records.push_back(std::move(rec));
            }
            for (std::size_t b = 0; b < 3; ++b) run.records.insert(run.records.end(), ev.records[b].begin(), ev.records[b].end());
            for (std::size_t b = 0; b < 3; ++b) run.series_wins[b] += ev.label.series_wins[b];
            run.selections.push_back(std::move(sel[d]));
        }
        previous = std::move(evals);
    }
    return run;
}

inline ChfRun run_online(const HierSeriesSet& data, const Selector& selector, const BaseModelSpec& spec, std::size_t from, std::size_t to,
                         std::size_t h, const OnlineOptions& opts = {}, const ChfTrainingSet* training = nullptr) {
    return run_online(std::span<const HierSeriesSet>(&data, 1), selector, spec, from, to, h, opts, training);
}

/// Records of one method tag, in run order.
inline std::vector<EvalRecord> records_for(std::span<const EvalRecord> records, const std::string& method) {
    std::vector<EvalRecord> out;
    for (const auto& r : records)
        if (r.method == method) out.push_back(r);
    return out;
}

/// Mean MASE per method over non-degenerate records.
inline double mean_score(std::span<const EvalRecord> records, const std::string& method, Metric metric = Metric::mase) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : records)
        if (r.method == method && !r.degenerate) {
            s += r.score(metric);
            ++n;
        }
    if (n == 0) throw ValidationError("mean_score: no records for " + method);
    return s / static_cast<double>(n);
}

} // namespace hfselect
