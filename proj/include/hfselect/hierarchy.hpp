#pragma once

#include "hfselect/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hfselect {

using Edge = std::pair<std::string, std::string>;

/**
 * A cross-sectional hierarchy and its summing matrix.
 *
 * Node order is canonical: internal nodes level by level, then the bottom
 * (leaf) nodes, each group ordered by depth and then by first appearance in
 * the edge list. For balanced trees this is plain level-major order. Rows of
 * every m-row matrix in the library follow this order, and the last m_k rows
 * are always the bottom series, so the bottom block of S is the identity.
 */
class Hierarchy {
public:
    static Hierarchy from_edges(const std::vector<Edge>& edges);

    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::string& node(std::size_t i) const { return nodes_.at(i); }
    std::size_t index_of(const std::string& id) const;
    std::optional<std::size_t> find(const std::string& id) const;

    /// Parent row index; nullopt for the top node.
    std::optional<std::size_t> parent(std::size_t i) const {
        return parent_.at(i) < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(parent_[i]));
    }
    std::size_t level(std::size_t i) const { return level_.at(i); }

    std::size_t m() const { return nodes_.size(); }
    std::size_t m_bottom() const { return m_bottom_; }
    std::size_t levels() const { return levels_; }
    std::size_t first_bottom() const { return nodes_.size() - m_bottom_; }
    bool is_bottom(std::size_t i) const { return i >= first_bottom(); }

    /// Series count per level (m_i).
    std::vector<std::size_t> series_per_level() const;
    /// Row indices grouped by level.
    std::vector<std::vector<std::size_t>> rows_by_level() const;

    const Eigen::MatrixXd& summing() const { return summing_; }
    std::vector<Edge> edges() const;

private:
    std::vector<std::string> nodes_;
    std::vector<long> parent_;
    std::vector<std::size_t> level_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t m_bottom_ = 0;
    std::size_t levels_ = 0;
    Eigen::MatrixXd summing_;
};

inline Hierarchy build_hierarchy(const std::vector<Edge>& edges) { return Hierarchy::from_edges(edges); }

inline Hierarchy Hierarchy::from_edges(const std::vector<Edge>& edges) {
    if (edges.empty()) throw ValidationError("hierarchy: edge list is empty");

    std::vector<std::string> appearance;
    std::unordered_map<std::string, std::size_t> first_seen;
    auto touch = [&](const std::string& id) {
        if (id.empty()) throw ValidationError("hierarchy: empty node identifier");
        if (first_seen.emplace(id, appearance.size()).second) appearance.push_back(id);
    };
    std::unordered_map<std::string, std::string> parent_of;
    std::unordered_map<std::string, std::vector<std::string>> children_of;
    for (const auto& [parent, child] : edges) {
        touch(parent);
        touch(child);
        if (parent == child) throw ValidationError("hierarchy: cycle detected at node '" + child + "'");
        if (!parent_of.emplace(child, parent).second)
            throw ValidationError("hierarchy: duplicate child '" + child + "'");
        children_of[parent].push_back(child);
    }

    std::vector<std::string> roots;
    for (const auto& id : appearance)
        if (!parent_of.contains(id)) roots.push_back(id);
    if (roots.empty()) throw ValidationError("hierarchy: cycle detected (no root node)");
    if (roots.size() > 1)
        throw ValidationError("hierarchy: multiple roots ('" + roots[0] + "', '" + roots[1] + "')");

    std::unordered_map<std::string, std::size_t> depth{{roots[0], 0}};
    std::vector<std::string> frontier{roots[0]};
    while (!frontier.empty()) {
        std::vector<std::string> next;
        for (const auto& id : frontier) {
            auto it = children_of.find(id);
            if (it == children_of.end()) continue;
            for (const auto& c : it->second) {
                depth[c] = depth[id] + 1;
                next.push_back(c);
            }
        }
        frontier = std::move(next);
    }
    if (depth.size() != appearance.size()) {
        for (const auto& id : appearance)
            if (!depth.contains(id)) throw ValidationError("hierarchy: cycle detected at node '" + id + "'");
    }

    std::vector<std::string> internal, leaves;
    for (const auto& id : appearance) (children_of.contains(id) ? internal : leaves).push_back(id);
    auto by_depth = [&](const std::string& a, const std::string& b) {
        return std::pair(depth[a], first_seen[a]) < std::pair(depth[b], first_seen[b]);
    };
    std::stable_sort(internal.begin(), internal.end(), by_depth);
    std::stable_sort(leaves.begin(), leaves.end(), by_depth);

    Hierarchy h;
    h.nodes_ = internal;
    h.nodes_.insert(h.nodes_.end(), leaves.begin(), leaves.end());
    h.m_bottom_ = leaves.size();
    for (std::size_t i = 0; i < h.nodes_.size(); ++i) h.index_.emplace(h.nodes_[i], i);
    h.parent_.resize(h.nodes_.size());
    h.level_.resize(h.nodes_.size());
    for (std::size_t i = 0; i < h.nodes_.size(); ++i) {
        const auto& id = h.nodes_[i];
        auto p = parent_of.find(id);
        h.parent_[i] = p == parent_of.end() ? -1 : static_cast<long>(h.index_.at(p->second));
        h.level_[i] = depth.at(id);
        h.levels_ = std::max(h.levels_, h.level_[i] + 1);
    }

    const std::size_t m = h.nodes_.size();
    h.summing_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(h.m_bottom_));
    for (std::size_t j = 0; j < h.m_bottom_; ++j) {
        long row = static_cast<long>(h.first_bottom() + j);
        while (row >= 0) {
            h.summing_(row, static_cast<Eigen::Index>(j)) = 1.0;
            row = h.parent_[static_cast<std::size_t>(row)];
        }
    }
    return h;
}

inline std::optional<std::size_t> Hierarchy::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

inline std::size_t Hierarchy::index_of(const std::string& id) const {
    auto i = find(id);
    if (!i) throw ValidationError("hierarchy: unknown node '" + id + "'");
    return *i;
}

inline std::vector<std::size_t> Hierarchy::series_per_level() const {
    std::vector<std::size_t> counts(levels_, 0);
    for (auto l : level_) ++counts[l];
    return counts;
}

inline std::vector<std::vector<std::size_t>> Hierarchy::rows_by_level() const {
    std::vector<std::vector<std::size_t>> rows(levels_);
    for (std::size_t i = 0; i < level_.size(); ++i) rows[level_[i]].push_back(i);
    return rows;
}

inline std::vector<Edge> Hierarchy::edges() const {
    std::vector<Edge> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (parent_[i] >= 0) out.emplace_back(nodes_[static_cast<std::size_t>(parent_[i])], nodes_[i]);
    return out;
}

// ---------------------------------------------------------------------------

/// Returns S * bottom for a (m_k x n) matrix of bottom-level values.
inline Eigen::MatrixXd aggregate_bottom(const Hierarchy& h, const Eigen::MatrixXd& bottom) {
    if (static_cast<std::size_t>(bottom.rows()) != h.m_bottom())
        throw ValidationError("aggregate_bottom: expected " + std::to_string(h.m_bottom()) + " rows, got " +
                              std::to_string(bottom.rows()));
    return h.summing() * bottom;
}

struct CoherenceReport {
    std::vector<double> violation;  ///< max_i |values - S*values_bottom| per period
    std::vector<double> relative;   ///< violation / (1 + |coherent top|)
    std::vector<std::size_t> flagged;
    double max_violation = 0.0;
    double max_relative = 0.0;

    bool coherent() const { return flagged.empty(); }
};

/// Per-period coherence check. A period is flagged when its violation exceeds
/// max(tol * (1 + |top|), 1e-9), where top is the aggregate of the bottom rows.
inline CoherenceReport check_coherence(const Hierarchy& h, const Eigen::MatrixXd& values, double tol) {
    if (static_cast<std::size_t>(values.rows()) != h.m())
        throw ValidationError("check_coherence: expected " + std::to_string(h.m()) + " rows, got " +
                              std::to_string(values.rows()));
    const auto nb = static_cast<Eigen::Index>(h.m_bottom());
    const Eigen::MatrixXd coherent = h.summing() * values.bottomRows(nb);
    CoherenceReport rep;
    for (Eigen::Index t = 0; t < values.cols(); ++t) {
        const double v = (values.col(t) - coherent.col(t)).cwiseAbs().maxCoeff();
        const double scale = 1.0 + std::abs(coherent(0, t));
        rep.violation.push_back(v);
        rep.relative.push_back(v / scale);
        rep.max_violation = std::max(rep.max_violation, v);
        rep.max_relative = std::max(rep.max_relative, v / scale);
        if (!(v <= std::max(tol * scale, 1e-9))) rep.flagged.push_back(static_cast<std::size_t>(t));
    }
    return rep;
}

// ---------------------------------------------------------------------------

/**
 * Observations (m x n, rows in hierarchy order) for one hierarchy, with an
 * optional regressor matrix of the same shape (prices).
 */
struct HierSeriesSet {
    std::string id;
    std::shared_ptr<const Hierarchy> hierarchy;
    Eigen::MatrixXd observations;
    std::optional<Eigen::MatrixXd> regressors;
    std::vector<std::string> period_labels;

    std::size_t periods() const { return static_cast<std::size_t>(observations.cols()); }
    std::size_t series() const { return static_cast<std::size_t>(observations.rows()); }
    const Hierarchy& tree() const { return *hierarchy; }
};

/// Validates shapes, finiteness and coherence (1e-6 relative) and returns the set.
inline HierSeriesSet make_series_set(std::string id, std::shared_ptr<const Hierarchy> h, Eigen::MatrixXd obs,
                                     std::optional<Eigen::MatrixXd> regressors = std::nullopt,
                                     std::vector<std::string> labels = {}) {
    if (!h) throw ValidationError("series set '" + id + "': missing hierarchy");
    if (static_cast<std::size_t>(obs.rows()) != h->m())
        throw ValidationError("series set '" + id + "': observation rows do not match hierarchy size");
    if (!obs.allFinite()) throw ValidationError("series set '" + id + "': missing or non-finite observations");
    if (regressors) {
        if (regressors->rows() != obs.rows() || regressors->cols() != obs.cols())
            throw ValidationError("series set '" + id + "': regressor matrix shape mismatch");
        if (!regressors->allFinite()) throw ValidationError("series set '" + id + "': non-finite regressor values");
    }
    const auto rep = check_coherence(*h, obs, 1e-6);
    if (!rep.coherent())
        throw ValidationError("series set '" + id + "': incoherent observations at period index " +
                              std::to_string(rep.flagged.front()));
    if (labels.empty()) {
        labels.reserve(static_cast<std::size_t>(obs.cols()));
        for (Eigen::Index t = 0; t < obs.cols(); ++t) labels.push_back(std::to_string(t + 1));
    } else if (labels.size() != static_cast<std::size_t>(obs.cols())) {
        throw ValidationError("series set '" + id + "': period label count mismatch");
    }
    return HierSeriesSet{std::move(id), std::move(h), std::move(obs), std::move(regressors), std::move(labels)};
}

} // namespace hfselect
