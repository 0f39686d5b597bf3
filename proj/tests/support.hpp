#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include "hfselect/hierarchy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hfselect::testing {

inline std::vector<Edge> figure1_edges() {
    return {{"Total", "A"}, {"Total", "B"}, {"A", "AA"}, {"A", "AB"}, {"B", "BA"}, {"B", "BB"}};
}

inline std::shared_ptr<const Hierarchy> figure1() {
    return std::make_shared<const Hierarchy>(build_hierarchy(figure1_edges()));
}

inline std::shared_ptr<const Hierarchy> fan(std::size_t leaves) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i < leaves; ++i) e.emplace_back("T", "c" + std::to_string(i));
    return std::make_shared<const Hierarchy>(build_hierarchy(e));
}

/// Random rooted tree with at most `max_levels` levels and `max_leaves` leaves.
/// Leaves may sit at different depths.
inline std::vector<Edge> random_tree(std::mt19937_64& rng, std::size_t min_levels, std::size_t max_levels,
                                     std::size_t max_leaves) {
    for (;;) {
        std::vector<Edge> edges;
        std::size_t leaves = 0, next_id = 1, deepest = 0;
        std::uniform_int_distribution<int> fanout(1, 4);
        std::bernoulli_distribution stop(0.25);
        struct Item { std::string id; std::size_t depth; };
        std::vector<Item> stack{{"n0", 0}};
        while (!stack.empty()) {
            Item it = stack.back();
            stack.pop_back();
            deepest = std::max(deepest, it.depth);
            const bool must_branch = it.depth == 0;
            if (it.depth + 1 >= max_levels || (!must_branch && stop(rng))) {
                ++leaves;
                continue;
            }
            const int kids = fanout(rng);
            for (int c = 0; c < kids; ++c) {
                std::string id = "n" + std::to_string(next_id++);
                edges.emplace_back(it.id, id);
                stack.push_back({id, it.depth + 1});
            }
        }
        if (leaves <= max_leaves && deepest + 1 >= min_levels) return edges;
    }
}

/// Bottom-to-all aggregation by walking parent links, one scalar at a time.
inline Eigen::MatrixXd brute_aggregate(const Hierarchy& h, const Eigen::MatrixXd& bottom) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h.m()), bottom.cols());
    for (Eigen::Index t = 0; t < bottom.cols(); ++t) {
        for (std::size_t j = 0; j < h.m_bottom(); ++j) {
            std::optional<std::size_t> node = h.first_bottom() + j;
            while (node) {
                out(static_cast<Eigen::Index>(*node), t) += bottom(static_cast<Eigen::Index>(j), t);
                node = h.parent(*node);
            }
        }
    }
    return out;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -10,
                                     double hi = 10) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
    return m;
}

/// Plain two-pass autocorrelation at one lag (R acf convention).
inline double scalar_acf(const std::vector<double>& x, std::size_t lag) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        den += (x[t] - mu) * (x[t] - mu);
        if (t + lag < x.size()) num += (x[t] - mu) * (x[t + lag] - mu);
    }
    return num / den;
}

inline std::vector<double> simulate_ar1(double phi, std::size_t n, std::uint64_t seed, double sigma = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, sigma);
    std::vector<double> y(n);
    double prev = 0.0;
    for (std::size_t burn = 0; burn < 100; ++burn) prev = phi * prev + z(rng);
    for (auto& v : y) v = prev = phi * prev + z(rng);
    return y;
}

/// Three-level retail shape: one total, `groups` groups, `per_group` leaves each.
inline std::shared_ptr<const Hierarchy> retail(std::size_t groups, std::size_t per_group) {
    std::vector<Edge> e;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::string gid = "G" + std::to_string(g);
        e.emplace_back("Total", gid);
        for (std::size_t j = 0; j < per_group; ++j) e.emplace_back(gid, gid + "_" + std::to_string(j));
    }
    return std::make_shared<const Hierarchy>(build_hierarchy(e));
}

/// Upper-level regressor rows as the average of the leaf rows below (leaf rows already filled).
inline void average_upper_prices(const Hierarchy& h, Eigen::MatrixXd& price) {
    Eigen::MatrixXd leaf_count = h.summing() * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(h.m_bottom()));
    Eigen::MatrixXd sums = h.summing() * price.bottomRows(static_cast<Eigen::Index>(h.m_bottom()));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h.first_bottom()); ++i) price.row(i) = sums.row(i) / leaf_count(i, 0);
}

/**
 * Data sets engineered so one reconciliation method is usually best.
 *
 * bu:  every leaf price drifts persistently (AR(1), phi 0.95) and leaves respond
 *      with elasticities of mixed sign. Leaf models see their own future prices;
 *      upper levels see only the average price and lean on lags, which degrade
 *      over the horizon faster than the one-step residuals covering COM suggest.
 * td:  a smooth total is split by fixed shares plus large zero-sum leaf noise,
 *      so only the total is forecastable.
 * com: a shared seasonal swing that is clear at the top, plus persistent
 *      leaf-specific AR(1) deviations that only the leaves carry, so both
 *      ends of the hierarchy hold part of the signal.
 */
enum class Regime { bu, td, com };

inline HierSeriesSet regime_dataset(Regime regime, std::shared_ptr<const Hierarchy> h, std::uint64_t seed, Eigen::Index n,
                                    const std::string& id) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto k = static_cast<Eigen::Index>(h->m_bottom());
    const auto m = static_cast<Eigen::Index>(h->m());
    Eigen::MatrixXd bottom(k, n);
    Eigen::MatrixXd price = Eigen::MatrixXd::Ones(m, n);
    const Eigen::Index first = static_cast<Eigen::Index>(h->first_bottom());
    switch (regime) {
    case Regime::bu:
        for (Eigen::Index j = 0; j < k; ++j) {
            const double base = 20.0 + 40.0 * u(rng), beta = (j % 2 ? 1.0 : -1.0) * (1.0 + 2.0 * u(rng));
            double x = 0.0;
            for (int burn = 0; burn < 50; ++burn) x = 0.95 * x + 0.05 * z(rng);
            for (Eigen::Index t = 0; t < n; ++t) {
                x = 0.95 * x + 0.05 * z(rng);
                price(first + j, t) = 1.0 + x;
                bottom(j, t) = base * (1.0 + beta * x) + 0.06 * base * z(rng);
            }
        }
        break;
    case Regime::td: {
        std::vector<double> share(static_cast<std::size_t>(k));
        double total_share = 0.0;
        for (auto& s : share) total_share += (s = 0.5 + u(rng));
        const double level = 100.0 * static_cast<double>(k), phase = 6.28318530717958648 * u(rng);
        for (Eigen::Index t = 0; t < n; ++t) {
            const double top = level * (1.0 + 0.3 * std::sin(6.28318530717958648 * static_cast<double>(t) / 26.0 + phase)) +
                               0.005 * level * z(rng);
            std::vector<double> e(static_cast<std::size_t>(k));
            double mean_e = 0.0;
            for (auto& v : e) mean_e += (v = z(rng)) / static_cast<double>(k);
            for (Eigen::Index j = 0; j < k; ++j) {
                const double s = share[static_cast<std::size_t>(j)] / total_share;
                bottom(j, t) = s * top + 0.35 * s * level * (e[static_cast<std::size_t>(j)] - mean_e);
                price(first + j, t) = 1.0 + 0.05 * z(rng);
            }
        }
        break;
    }
    case Regime::com: {
        std::vector<double> own(static_cast<std::size_t>(k), 0.0), base(static_cast<std::size_t>(k));
        for (auto& b : base) b = 30.0 + 30.0 * u(rng);
        const double phase = 6.28318530717958648 * u(rng);
        for (Eigen::Index t = 0; t < n; ++t) {
            const double season = std::sin(6.28318530717958648 * static_cast<double>(t) / 26.0 + phase);
            for (Eigen::Index j = 0; j < k; ++j) {
                auto& o = own[static_cast<std::size_t>(j)];
                o = 0.9 * o + z(rng);
                const double b = base[static_cast<std::size_t>(j)];
                bottom(j, t) = b * (1.0 + 0.2 * season) + 0.1 * b * o + 0.05 * b * z(rng);
                price(first + j, t) = 1.0 + 0.05 * z(rng);
            }
        }
        break;
    }
    }
    average_upper_prices(*h, price);
    Eigen::MatrixXd obs = aggregate_bottom(*h, bottom);
    return make_series_set(id, std::move(h), std::move(obs), std::move(price));
}

} // namespace hfselect::testing
