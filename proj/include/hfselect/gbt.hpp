#pragma once

#include "hfselect/error.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hfselect {

/// Defaults are the settings reported for the XGB selector.
struct GbtConfig {
    double eta = 0.01;
    int max_depth = 5;
    double min_child_weight = 5.0;
    double subsample = 0.7;
    double colsample_bytree = 1.0;
    int n_rounds = 1000;
    int n_classes = 3;
    double lambda_reg = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("gbt.eta must be in (0, 1]");
        if (max_depth < 0) throw ValidationError("gbt.max_depth must be >= 0");
        if (!(min_child_weight >= 0.0)) throw ValidationError("gbt.min_child_weight must be >= 0");
        if (!(subsample > 0.0 && subsample <= 1.0)) throw ValidationError("gbt.subsample must be in (0, 1]");
        if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0))
            throw ValidationError("gbt.colsample_bytree must be in (0, 1]");
        if (n_rounds < 0) throw ValidationError("gbt.n_rounds must be >= 0");
        if (n_classes < 2) throw ValidationError("gbt.n_classes must be >= 2");
        if (!(lambda_reg >= 0.0)) throw ValidationError("gbt.lambda_reg must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const GbtConfig& c) {
    j = {{"eta", c.eta},
         {"max_depth", c.max_depth},
         {"min_child_weight", c.min_child_weight},
         {"subsample", c.subsample},
         {"colsample_bytree", c.colsample_bytree},
         {"n_rounds", c.n_rounds},
         {"n_classes", c.n_classes},
         {"lambda_reg", c.lambda_reg},
         {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, GbtConfig& c) {
    static const std::vector<std::string> known = {"eta",      "max_depth",  "min_child_weight", "subsample", "colsample_bytree",
                                                   "n_rounds", "n_classes", "lambda_reg",       "seed"};
    if (!j.is_object()) throw ValidationError("gbt: config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ValidationError("gbt." + it.key() + ": unknown field");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(std::string("gbt.") + key + ": wrong type");
        }
    };
    get("eta", c.eta);
    get("max_depth", c.max_depth);
    get("min_child_weight", c.min_child_weight);
    get("subsample", c.subsample);
    get("colsample_bytree", c.colsample_bytree);
    get("n_rounds", c.n_rounds);
    get("n_classes", c.n_classes);
    get("lambda_reg", c.lambda_reg);
    get("seed", c.seed);
}

struct TreeNode {
    int feature = -1;  ///< -1 for a leaf
    double threshold = 0.0;
    double gain = 0.0;
    double cover = 0.0;  ///< hessian sum of the training rows reaching the node
    double value = 0.0;  ///< leaf output, already scaled by eta
    int left = -1;
    int right = -1;

    bool is_leaf() const { return feature < 0; }
};

/// Node 0 is the root. Rows with x[feature] < threshold go left.
struct Tree {
    std::vector<TreeNode> nodes;

    template <class Row>
    double predict(const Row& x) const {
        int i = 0;
        while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[n.feature] < n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }

    int depth() const {
        std::vector<int> d(nodes.size(), 0);
        int best = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].is_leaf()) continue;
            d[static_cast<std::size_t>(nodes[i].left)] = d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
            best = std::max(best, d[i] + 1);
        }
        return best;
    }

    std::size_t internal_nodes() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
    }
};

struct GbtModel {
    GbtConfig config;
    std::size_t n_features = 0;
    std::vector<double> base_score;          ///< log class priors
    std::vector<std::vector<Tree>> rounds;   ///< rounds[r][c]
    std::vector<double> loss_history;        ///< training mlogloss after each round

    std::size_t n_classes() const { return base_score.size(); }

    template <class Row>
    std::vector<double> margins(const Row& x) const {
        std::vector<double> f = base_score;
        for (const auto& round : rounds)
            for (std::size_t c = 0; c < round.size(); ++c) f[c] += round[c].predict(x);
        return f;
    }

    std::vector<double> predict_proba(const std::vector<double>& x) const {
        if (x.size() != n_features)
            throw ValidationError("gbt predict: row width " + std::to_string(x.size()) + " does not match training width " +
                                  std::to_string(n_features));
        return softmax(margins(x));
    }

    /// Argmax of predict_proba; ties go to the lowest class index.
    int predict(const std::vector<double>& x) const {
        const auto p = predict_proba(x);
        return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }

    static std::vector<double> softmax(std::vector<double> f) {
        const double hi = *std::max_element(f.begin(), f.end());
        double sum = 0.0;
        for (double& v : f) sum += (v = std::exp(v - hi));
        for (double& v : f) v /= sum;
        return f;
    }
};

namespace gbt_detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t bounded(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n)); }

struct Candidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

struct Scan {
    double gl = 0.0, hl = 0.0, last = 0.0;
    bool started = false;
};

inline double score(double g, double h, double lambda) { return g * g / (h + lambda); }

/**
 * Grows one depth-limited tree level by level. `order[f]` lists the rows
 * sorted by feature f and `sorted[f]` the matching values; `node_of[i]` is
 * the current node of row i or -1 when the row is outside this round's sample.
 */
inline Tree grow_tree(const Eigen::MatrixXd& x, const std::vector<std::vector<std::size_t>>& order,
                      const std::vector<std::vector<double>>& sorted, const std::vector<double>& g,
                      const std::vector<double>& h, std::vector<int> node_of, const std::vector<int>& features,
                      const GbtConfig& cfg) {
    constexpr double min_gain = 1e-12;
    const double lambda = cfg.lambda_reg;
    Tree tree;
    std::vector<double> gsum(1, 0.0), hsum(1, 0.0);
    for (std::size_t i = 0; i < node_of.size(); ++i) {
        if (node_of[i] < 0) continue;
        gsum[0] += g[i];
        hsum[0] += h[i];
    }
    tree.nodes.push_back({});
    std::vector<int> frontier{0};

    for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
        std::vector<int> slot(tree.nodes.size(), -1);
        for (std::size_t k = 0; k < frontier.size(); ++k) slot[static_cast<std::size_t>(frontier[k])] = static_cast<int>(k);
        std::vector<Candidate> best(frontier.size());
        for (int f : features) {
            std::vector<Scan> scan(frontier.size());
            const auto& ord = order[static_cast<std::size_t>(f)];
            const auto& val = sorted[static_cast<std::size_t>(f)];
            for (std::size_t r = 0; r < ord.size(); ++r) {
                const std::size_t i = ord[r];
                const int node = node_of[i];
                if (node < 0 || slot[static_cast<std::size_t>(node)] < 0) continue;
                const auto k = static_cast<std::size_t>(slot[static_cast<std::size_t>(node)]);
                auto& s = scan[k];
                const double v = val[r];
                if (s.started && v > s.last) {
                    const double gl = s.gl, hl = s.hl;
                    const double gr = gsum[static_cast<std::size_t>(node)] - gl, hr = hsum[static_cast<std::size_t>(node)] - hl;
                    if (hl >= cfg.min_child_weight && hr >= cfg.min_child_weight) {
                        const double gain = 0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) -
                                                   score(gsum[static_cast<std::size_t>(node)], hsum[static_cast<std::size_t>(node)], lambda));
                        if (gain > best[k].gain) {
                            double thr = s.last + 0.5 * (v - s.last);
                            if (!(s.last < thr && thr <= v)) thr = v;
                            best[k] = {gain, f, thr};
                        }
                    }
                }
                s.gl += g[i];
                s.hl += h[i];
                s.last = v;
                s.started = true;
            }
        }

        std::vector<int> next;
        for (std::size_t k = 0; k < frontier.size(); ++k) {
            if (best[k].feature < 0 || !(best[k].gain > min_gain)) continue;
            const auto parent = static_cast<std::size_t>(frontier[k]);
            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            gsum.resize(tree.nodes.size(), 0.0);
            hsum.resize(tree.nodes.size(), 0.0);
            auto& p = tree.nodes[parent];
            p.feature = best[k].feature;
            p.threshold = best[k].threshold;
            p.gain = best[k].gain;
            p.left = left;
            p.right = left + 1;
            next.push_back(left);
            next.push_back(left + 1);
        }
        if (next.empty()) break;
        for (std::size_t i = 0; i < node_of.size(); ++i) {
            const int node = node_of[i];
            if (node < 0) continue;
            const auto& n = tree.nodes[static_cast<std::size_t>(node)];
            if (n.is_leaf()) continue;
            const int child = x(static_cast<Eigen::Index>(i), n.feature) < n.threshold ? n.left : n.right;
            node_of[i] = child;
            gsum[static_cast<std::size_t>(child)] += g[i];
            hsum[static_cast<std::size_t>(child)] += h[i];
        }
        frontier = std::move(next);
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        auto& n = tree.nodes[i];
        n.cover = hsum[i];
        if (n.is_leaf()) n.value = -gsum[i] / (hsum[i] + lambda) * cfg.eta;
    }
    return tree;
}

inline double mlogloss(const Eigen::MatrixXd& margins, const std::vector<int>& labels) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < margins.rows(); ++i) {
        const double hi = margins.row(i).maxCoeff();
        const double lse = hi + std::log((margins.row(i).array() - hi).exp().sum());
        loss += lse - margins(i, labels[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(margins.rows());
}

} // namespace gbt_detail

/**
 * Softmax gradient boosting. Each round computes g = p - y and h = p(1 - p)
 * from the current margins and fits one regression tree per class.
 *
 * Rows are put into a canonical order (lexicographic by feature values, then
 * label) before training, so with subsample = 1 the model does not depend on
 * the order rows are supplied in. Row sampling is one Bernoulli draw per row
 * per round, shared by the class trees of that round; column sampling draws a
 * fresh subset per tree.
 */
inline GbtModel train(const Eigen::MatrixXd& rows, const std::vector<int>& labels, const GbtConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(rows.rows());
    const auto d = static_cast<std::size_t>(rows.cols());
    const auto k = static_cast<std::size_t>(cfg.n_classes);
    if (d == 0) throw ValidationError("gbt train: zero feature columns");
    if (labels.size() != n) throw ValidationError("gbt train: label count does not match row count");
    if (n < k) throw ValidationError("gbt train: fewer rows than classes");
    if (!rows.allFinite()) throw ValidationError("gbt train: non-finite feature value");
    std::vector<std::size_t> counts(k, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw ValidationError("gbt train: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0) throw ValidationError("gbt train: class " + std::to_string(c) + " absent (degenerate training set)");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        for (std::size_t f = 0; f < d; ++f) {
            const double va = rows(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(f));
            const double vb = rows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f));
            if (va != vb) return va < vb;
        }
        return labels[a] < labels[b];
    });
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(perm[i]));
        y[i] = labels[perm[i]];
    }

    std::vector<std::vector<std::size_t>> order(d, std::vector<std::size_t>(n));
    std::vector<std::vector<double>> sorted(d, std::vector<double>(n));
    for (std::size_t f = 0; f < d; ++f) {
        std::iota(order[f].begin(), order[f].end(), 0);
        std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) {
            return x(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(f)) < x(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f));
        });
        for (std::size_t r = 0; r < n; ++r) sorted[f][r] = x(static_cast<Eigen::Index>(order[f][r]), static_cast<Eigen::Index>(f));
    }

    GbtModel model;
    model.config = cfg;
    model.n_features = d;
    model.base_score.resize(k);
    for (std::size_t c = 0; c < k; ++c) model.base_score[c] = std::log(static_cast<double>(counts[c]) / static_cast<double>(n));

    Eigen::MatrixXd margin(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) margin(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = model.base_score[c];

    std::mt19937_64 rng(cfg.seed);
    const auto n_cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.colsample_bytree * static_cast<double>(d) - 1e-9)));
    std::vector<int> all_features(d);
    std::iota(all_features.begin(), all_features.end(), 0);
    std::vector<double> g(n), h(n);
    Eigen::MatrixXd prob(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));

    for (int round = 0; round < cfg.n_rounds; ++round) {
        for (Eigen::Index i = 0; i < margin.rows(); ++i) {
            const double hi = margin.row(i).maxCoeff();
            prob.row(i) = (margin.row(i).array() - hi).exp();
            prob.row(i) /= prob.row(i).sum();
        }
        std::vector<int> sample(n, 0);
        if (cfg.subsample < 1.0) {
            bool any = false;
            for (auto& s : sample) {
                s = gbt_detail::unit_uniform(rng) < cfg.subsample ? 0 : -1;
                any = any || s == 0;
            }
            if (!any) std::fill(sample.begin(), sample.end(), 0);
        }
        std::vector<Tree> trees(k);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                const double p = prob(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
                g[i] = p - (y[i] == static_cast<int>(c) ? 1.0 : 0.0);
                h[i] = std::max(p * (1.0 - p), 1e-16);
            }
            std::vector<int> features = all_features;
            if (n_cols < d) {
                for (std::size_t j = 0; j < n_cols; ++j) std::swap(features[j], features[j + gbt_detail::bounded(rng, d - j)]);
                features.resize(n_cols);
                std::sort(features.begin(), features.end());
            }
            trees[c] = gbt_detail::grow_tree(x, order, sorted, g, h, sample, features, cfg);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = x.row(static_cast<Eigen::Index>(i));
            for (std::size_t c = 0; c < k; ++c) margin(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) += trees[c].predict(row);
        }
        model.rounds.push_back(std::move(trees));
        model.loss_history.push_back(gbt_detail::mlogloss(margin, y));
    }
    return model;
}

/// Split counts per feature, descending; ties by feature index. Unused features are omitted.
inline std::vector<std::pair<std::size_t, std::size_t>> feature_importance(const GbtModel& model) {
    std::vector<std::size_t> counts(model.n_features, 0);
    for (const auto& round : model.rounds)
        for (const auto& tree : round)
            for (const auto& node : tree.nodes)
                if (!node.is_leaf()) ++counts[static_cast<std::size_t>(node.feature)];
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t f = 0; f < counts.size(); ++f)
        if (counts[f] > 0) out.emplace_back(f, counts[f]);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

inline constexpr const char* kGbtFormat = "hfselect-gbt";
inline constexpr int kGbtFormatVersion = 1;

namespace gbt_detail {

inline nlohmann::json node_to_json(const Tree& t, int i) {
    const auto& n = t.nodes[static_cast<std::size_t>(i)];
    if (n.is_leaf()) return {{"leaf", n.value}, {"cover", n.cover}};
    return {{"split", n.feature},
            {"threshold", n.threshold},
            {"gain", n.gain},
            {"cover", n.cover},
            {"left", node_to_json(t, n.left)},
            {"right", node_to_json(t, n.right)}};
}

// Rebuilds in breadth-first order, the same layout training produces.
inline Tree tree_from_json(const nlohmann::json& root, std::size_t n_features) {
    Tree t;
    std::vector<const nlohmann::json*> queue{&root};
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto& j = *queue[q];
        TreeNode n;
        n.cover = j.at("cover").get<double>();
        if (j.contains("leaf")) {
            n.value = j.at("leaf").get<double>();
        } else {
            n.feature = j.at("split").get<int>();
            if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= n_features)
                throw ValidationError("gbt model: split feature out of range");
            n.threshold = j.at("threshold").get<double>();
            n.gain = j.at("gain").get<double>();
            n.left = static_cast<int>(queue.size());
            n.right = n.left + 1;
            queue.push_back(&j.at("left"));
            queue.push_back(&j.at("right"));
        }
        t.nodes.push_back(n);
    }
    return t;
}

} // namespace gbt_detail

inline nlohmann::json model_to_json(const GbtModel& m) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& round : m.rounds) {
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& t : round) trees.push_back(gbt_detail::node_to_json(t, 0));
        rounds.push_back(std::move(trees));
    }
    return {{"format", kGbtFormat},
            {"version", kGbtFormatVersion},
            {"config", m.config},
            {"n_features", m.n_features},
            {"base_score", m.base_score},
            {"loss_history", m.loss_history},
            {"rounds", std::move(rounds)}};
}

inline GbtModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kGbtFormat) throw ValidationError("gbt model: unexpected format tag");
        if (j.at("version").get<int>() != kGbtFormatVersion) throw ValidationError("gbt model: unsupported version");
        GbtModel m;
        m.config = j.at("config").get<GbtConfig>();
        m.n_features = j.at("n_features").get<std::size_t>();
        m.base_score = j.at("base_score").get<std::vector<double>>();
        m.loss_history = j.at("loss_history").get<std::vector<double>>();
        if (m.base_score.size() < 1) throw ValidationError("gbt model: empty base score");
        for (const auto& round : j.at("rounds")) {
            std::vector<Tree> trees;
            for (const auto& t : round) trees.push_back(gbt_detail::tree_from_json(t, m.n_features));
            if (trees.size() != m.base_score.size()) throw ValidationError("gbt model: tree count does not match class count");
            m.rounds.push_back(std::move(trees));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("gbt model: malformed JSON: ") + e.what());
    }
}

} // namespace hfselect
