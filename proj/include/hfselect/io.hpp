#pragma once

#include "hfselect/chf.hpp"
#include "hfselect/detail/parallel.hpp"
#include "hfselect/error.hpp"
#include "hfselect/eval.hpp"
#include "hfselect/features.hpp"
#include "hfselect/gbt.hpp"
#include "hfselect/hierarchy.hpp"
#include "hfselect/tsmodel.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace hfselect {

inline constexpr const char* kVersion = "1.0.0";

namespace io_detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw RuntimeFailure("could not format a number");
    return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& where) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw ValidationError(where + ": '" + std::string(s) + "' is not a finite number");
    return v;
}

inline long parse_long(std::string_view s, const std::string& where) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError(where + ": '" + std::string(s) + "' is not an integer");
    return v;
}

/// One CSV record; double quotes may wrap fields and "" escapes a quote.
inline std::vector<std::string> split_csv(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    if (quoted) throw ValidationError("CSV: unterminated quoted field");
    return out;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + p.string() + "'");
    out << content;
    if (!out) throw RuntimeFailure("write failed for '" + p.string() + "'");
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(what + ": invalid JSON: " + e.what());
    }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

// Reads `key` into `field` when present, reporting `path.key` on a type error.
template <class T>
void get_field(const nlohmann::json& j, const std::string& path, const char* key, T& field) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(path + "." + key + ": wrong type");
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ValidationError(path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ValidationError(path + "." + it.key() + ": unknown field");
    }
}

} // namespace io_detail

/// Edges shared by every hierarchy, or per hierarchy id.
struct StructureSpec {
    std::optional<std::vector<Edge>> shared;
    std::map<std::string, std::vector<Edge>> per_hierarchy;

    const std::vector<Edge>* edges_for(const std::string& id) const {
        if (auto it = per_hierarchy.find(id); it != per_hierarchy.end()) return &it->second;
        return shared ? &*shared : nullptr;
    }
};

namespace io_detail {

inline std::vector<Edge> edges_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array()) throw ValidationError(path + ": expected an array of [parent, child] pairs");
    std::vector<Edge> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
            throw ValidationError(path + "[" + std::to_string(i) + "]: expected [parent, child] strings");
        out.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return out;
}

inline nlohmann::json edges_to_json(const std::vector<Edge>& edges) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [p, c] : edges) arr.push_back({p, c});
    return arr;
}

} // namespace io_detail

/// Accepts {"edges": [...]} or {"hierarchies": {"<id>": {"edges": [...]}}} (both may appear).
inline StructureSpec structure_from_json(const nlohmann::json& j) {
    io_detail::reject_unknown(j, "structure", {"edges", "hierarchies"});
    StructureSpec s;
    if (j.contains("edges")) s.shared = io_detail::edges_from_json(j.at("edges"), "structure.edges");
    if (j.contains("hierarchies")) {
        const auto& hs = j.at("hierarchies");
        if (!hs.is_object()) throw ValidationError("structure.hierarchies: expected an object");
        for (auto it = hs.begin(); it != hs.end(); ++it) {
            const std::string path = "structure.hierarchies." + it.key();
            io_detail::reject_unknown(it.value(), path, {"edges"});
            if (!it.value().contains("edges")) throw ValidationError(path + ".edges: missing");
            s.per_hierarchy[it.key()] = io_detail::edges_from_json(it.value().at("edges"), path + ".edges");
        }
    }
    if (!s.shared && s.per_hierarchy.empty()) throw ValidationError("structure: no edges given");
    return s;
}

inline StructureSpec load_structure(const std::filesystem::path& path) {
    return structure_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()));
}

/// One shared edge list when every hierarchy has the same structure, else one entry per hierarchy.
inline nlohmann::json structure_to_json(std::span<const HierSeriesSet> datasets) {
    bool same = true;
    for (const auto& d : datasets) same = same && d.tree().edges() == datasets.front().tree().edges();
    if (same && !datasets.empty()) return {{"edges", io_detail::edges_to_json(datasets.front().tree().edges())}};
    nlohmann::json hs = nlohmann::json::object();
    for (const auto& d : datasets) hs[d.id] = {{"edges", io_detail::edges_to_json(d.tree().edges())}};
    return {{"hierarchies", hs}};
}

/// Edges from '/'-separated path ids ("Total/A/AA" is a child of "Total/A").
inline std::vector<Edge> infer_edges(const std::vector<std::string>& node_ids) {
    std::set<std::string> ids(node_ids.begin(), node_ids.end());
    std::vector<Edge> edges;
    std::set<std::string> seen;
    for (const auto& id : node_ids) {
        std::string child = id;
        while (true) {
            const auto cut = child.rfind('/');
            if (cut == std::string::npos) break;
            std::string parent = child.substr(0, cut);
            if (parent.empty()) throw ValidationError("structure inference: node id '" + id + "' has an empty path segment");
            if (seen.insert(child).second) edges.emplace_back(parent, child);
            child = parent;
        }
    }
    if (edges.empty())
        throw ValidationError("structure inference: no structure file given and node ids are not '/'-separated paths");
    return edges;
}

struct LoadOptions {
    double coherence_tol = 1e-6;
};

/**
 * Reads a long-format CSV (hierarchy_id, node_id, period, value[, price]).
 * Rows for upper-level nodes are optional: when a node has no rows it is
 * aggregated from the leaves, and when present it must agree with that
 * aggregate. Missing upper-level prices become the average of the leaf
 * prices below. Hierarchies keep their order of first appearance.
 */
inline std::vector<HierSeriesSet> load_dataset(const std::filesystem::path& data_path, const std::optional<StructureSpec>& structure = std::nullopt,
                                               const LoadOptions& opts = {}) {
    const std::string text = io_detail::read_file(data_path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(data_path.string() + ": empty file");
    const auto header = io_detail::split_csv(line);
    auto column = [&](const char* name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    const auto c_h = column("hierarchy_id"), c_n = column("node_id"), c_p = column("period"), c_v = column("value");
    const auto c_price = column("price");
    if (!c_h || !c_n || !c_p || !c_v)
        throw ValidationError(data_path.string() + ": header must contain hierarchy_id, node_id, period, value");

    struct Cell {
        double value;
        std::optional<double> price;
    };
    struct Raw {
        std::vector<std::string> node_order;
        std::map<std::string, std::map<long, Cell>> cells;
    };
    std::vector<std::string> order;
    std::map<std::string, Raw> raw;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = io_detail::split_csv(line);
        const std::string where = data_path.string() + ":" + std::to_string(line_no);
        if (f.size() != header.size()) throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields");
        const auto& hid = f[*c_h];
        const auto& nid = f[*c_n];
        if (hid.empty() || nid.empty()) throw ValidationError(where + ": empty hierarchy or node id");
        auto [it, fresh] = raw.try_emplace(hid);
        if (fresh) order.push_back(hid);
        auto& r = it->second;
        auto [nit, new_node] = r.cells.try_emplace(nid);
        if (new_node) r.node_order.push_back(nid);
        const long period = io_detail::parse_long(f[*c_p], where + " period");
        Cell cell{io_detail::parse_double(f[*c_v], where + " value"), std::nullopt};
        if (c_price && !f[*c_price].empty()) cell.price = io_detail::parse_double(f[*c_price], where + " price");
        if (!nit->second.emplace(period, cell).second)
            throw ValidationError(where + ": duplicate row for " + hid + "/" + nid + " period " + std::to_string(period));
    }
    if (order.empty()) throw ValidationError(data_path.string() + ": no data rows");

    std::vector<HierSeriesSet> out;
    for (const auto& hid : order) {
        const auto& r = raw.at(hid);
        std::vector<Edge> edges;
        if (structure) {
            const auto* e = structure->edges_for(hid);
            if (!e) throw ValidationError("structure file has no edges for hierarchy '" + hid + "'");
            edges = *e;
        } else {
            edges = infer_edges(r.node_order);
        }
        auto h = std::make_shared<const Hierarchy>(build_hierarchy(edges));
        for (const auto& nid : r.node_order)
            if (!h->find(nid)) throw ValidationError("hierarchy '" + hid + "': unknown node '" + nid + "'");

        std::set<long> periods;
        for (const auto& [nid, cells] : r.cells)
            for (const auto& [p, c] : cells) periods.insert(p);
        const std::vector<long> plist(periods.begin(), periods.end());
        const auto n = static_cast<Eigen::Index>(plist.size());
        const auto m = static_cast<Eigen::Index>(h->m());
        Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(m, n);
        Eigen::MatrixXd price = Eigen::MatrixXd::Zero(m, n);
        std::vector<bool> present(h->m(), false), has_price(h->m(), false);
        bool any_price = false;
        for (const auto& [nid, cells] : r.cells) {
            const auto i = h->index_of(nid);
            if (cells.size() != plist.size())
                throw ValidationError("hierarchy '" + hid + "': node '" + nid + "' has " + std::to_string(cells.size()) + " of " +
                                      std::to_string(plist.size()) + " periods (ragged)");
            present[i] = true;
            std::size_t priced = 0;
            Eigen::Index t = 0;
            for (const auto& [p, c] : cells) {
                obs(static_cast<Eigen::Index>(i), t) = c.value;
                if (c.price) {
                    price(static_cast<Eigen::Index>(i), t) = *c.price;
                    ++priced;
                }
                ++t;
            }
            if (priced != 0 && priced != cells.size())
                throw ValidationError("hierarchy '" + hid + "': node '" + nid + "' has prices for only some periods");
            has_price[i] = priced != 0;
            any_price = any_price || has_price[i];
        }
        const auto first = static_cast<Eigen::Index>(h->first_bottom());
        const auto k = static_cast<Eigen::Index>(h->m_bottom());
        for (std::size_t i = h->first_bottom(); i < h->m(); ++i)
            if (!present[i]) throw ValidationError("hierarchy '" + hid + "': bottom node '" + h->node(i) + "' has no rows");
        Eigen::MatrixXd agg = aggregate_bottom(*h, obs.bottomRows(k));
        Eigen::MatrixXd given = agg;
        for (Eigen::Index i = 0; i < first; ++i)
            if (present[static_cast<std::size_t>(i)]) given.row(i) = obs.row(i);
        const auto rep = check_coherence(*h, given, opts.coherence_tol);
        if (!rep.coherent()) {
            std::string list;
            for (std::size_t q = 0; q < rep.flagged.size() && q < 20; ++q)
                list += (q ? ", " : "") + std::to_string(plist[rep.flagged[q]]);
            if (rep.flagged.size() > 20) list += ", ...";
            throw ValidationError("hierarchy '" + hid + "': upper-level rows disagree with the bottom-level aggregate at period(s) " + list);
        }

        std::optional<Eigen::MatrixXd> reg;
        if (any_price) {
            for (std::size_t i = h->first_bottom(); i < h->m(); ++i)
                if (!has_price[i]) throw ValidationError("hierarchy '" + hid + "': bottom node '" + h->node(i) + "' has no price");
            const Eigen::VectorXd counts = h->summing() * Eigen::VectorXd::Ones(k);
            const Eigen::MatrixXd sums = h->summing() * price.bottomRows(k);
            for (Eigen::Index i = 0; i < first; ++i)
                if (!has_price[static_cast<std::size_t>(i)]) price.row(i) = sums.row(i) / counts(i);
            reg = price;
        }
        std::vector<std::string> labels;
        for (long p : plist) labels.push_back(std::to_string(p));
        // Upper rows that passed the check are replaced by the exact aggregate.
        out.push_back(make_series_set(hid, h, std::move(agg), reg, labels));
    }
    return out;
}

/// Writes every node and period in hierarchy order; prices when the sets carry them.
inline std::string dataset_csv(std::span<const HierSeriesSet> datasets) {
    bool price = !datasets.empty();
    for (const auto& d : datasets) price = price && d.regressors.has_value();
    std::string s = price ? "hierarchy_id,node_id,period,value,price\n" : "hierarchy_id,node_id,period,value\n";
    for (const auto& d : datasets) {
        const auto& h = d.tree();
        for (std::size_t i = 0; i < h.m(); ++i) {
            for (std::size_t t = 0; t < d.periods(); ++t) {
                s += io_detail::csv_field(d.id) + "," + io_detail::csv_field(h.node(i)) + "," + d.period_labels[t] + "," +
                     io_detail::format_double(d.observations(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
                if (price) s += "," + io_detail::format_double((*d.regressors)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
                s += "\n";
            }
        }
    }
    return s;
}

inline void save_dataset(const std::filesystem::path& data_path, const std::filesystem::path& structure_path,
                         std::span<const HierSeriesSet> datasets) {
    io_detail::write_file(data_path, dataset_csv(datasets));
    io_detail::write_file(structure_path, structure_to_json(datasets).dump(2) + "\n");
}

/**
 * Synthetic retail hierarchies. Each leaf has a base level, a mild linear
 * trend and noise mixing a hierarchy-wide factor with its own draws (weight
 * `correlation`). In a promotion period the price drops by a discount and
 * demand is multiplied by a lift. A leaf follows its group's promotion
 * calendar with probability `promo_sync`, otherwise its own; either way a
 * period is a promotion with probability `promo_prob`. `heterogeneity`
 * spreads the noise level across hierarchies by a factor up to 2^h either way.
 */
struct SynthConfig {
    std::size_t n_hierarchies = 55;
    std::vector<std::size_t> fanout{2, 6};  ///< children per node below each level; {2, 6} gives 1/2/12
    std::size_t n_periods = 120;
    double base_min = 20.0, base_max = 200.0;
    double trend = 0.003;                   ///< max relative slope per period
    double noise = 0.15;                    ///< noise sd relative to the base level
    double correlation = 0.3;
    double promo_prob = 0.1;
    double promo_sync = 0.5;
    double lift_min = 2.0, lift_max = 5.0;
    double price_min = 1.0, price_max = 10.0;
    double discount_min = 0.1, discount_max = 0.4;
    double heterogeneity = 1.0;
    std::uint64_t seed = 7;

    void validate() const {
        auto prob = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("synth.") + name + ": must be in [0, 1]");
        };
        if (n_hierarchies < 1) throw ValidationError("synth.n_hierarchies: must be >= 1");
        if (fanout.empty()) throw ValidationError("synth.fanout: need at least one level below the total");
        for (auto f : fanout)
            if (f < 1) throw ValidationError("synth.fanout: counts must be >= 1");
        if (n_periods < 2) throw ValidationError("synth.n_periods: must be >= 2");
        if (!(base_min > 0.0 && base_max >= base_min)) throw ValidationError("synth.base_min/base_max: need 0 < min <= max");
        if (!(trend >= 0.0)) throw ValidationError("synth.trend: must be >= 0");
        if (!(noise >= 0.0)) throw ValidationError("synth.noise: must be >= 0");
        prob(correlation, "correlation");
        prob(promo_prob, "promo_prob");
        prob(promo_sync, "promo_sync");
        if (!(lift_min >= 1.0 && lift_max >= lift_min)) throw ValidationError("synth.lift_min/lift_max: need 1 <= min <= max");
        if (!(price_min > 0.0 && price_max >= price_min)) throw ValidationError("synth.price_min/price_max: need 0 < min <= max");
        if (!(discount_min >= 0.0 && discount_max >= discount_min && discount_max < 1.0))
            throw ValidationError("synth.discount_min/discount_max: need 0 <= min <= max < 1");
        if (!(heterogeneity >= 0.0)) throw ValidationError("synth.heterogeneity: must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"n_hierarchies", c.n_hierarchies}, {"fanout", c.fanout},   {"n_periods", c.n_periods},       {"base_min", c.base_min},
         {"base_max", c.base_max},           {"trend", c.trend},     {"noise", c.noise},               {"correlation", c.correlation},
         {"promo_prob", c.promo_prob},       {"promo_sync", c.promo_sync}, {"lift_min", c.lift_min},   {"lift_max", c.lift_max},
         {"price_min", c.price_min},         {"price_max", c.price_max},   {"discount_min", c.discount_min},
         {"discount_max", c.discount_max},   {"heterogeneity", c.heterogeneity}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    const std::string p = "synth";
    io_detail::reject_unknown(j, p, {"n_hierarchies", "fanout", "n_periods", "base_min", "base_max", "trend", "noise", "correlation",
                                     "promo_prob", "promo_sync", "lift_min", "lift_max", "price_min", "price_max", "discount_min",
                                     "discount_max", "heterogeneity", "seed"});
    io_detail::get_field(j, p, "n_hierarchies", c.n_hierarchies);
    io_detail::get_field(j, p, "fanout", c.fanout);
    io_detail::get_field(j, p, "n_periods", c.n_periods);
    io_detail::get_field(j, p, "base_min", c.base_min);
    io_detail::get_field(j, p, "base_max", c.base_max);
    io_detail::get_field(j, p, "trend", c.trend);
    io_detail::get_field(j, p, "noise", c.noise);
    io_detail::get_field(j, p, "correlation", c.correlation);
    io_detail::get_field(j, p, "promo_prob", c.promo_prob);
    io_detail::get_field(j, p, "promo_sync", c.promo_sync);
    io_detail::get_field(j, p, "lift_min", c.lift_min);
    io_detail::get_field(j, p, "lift_max", c.lift_max);
    io_detail::get_field(j, p, "price_min", c.price_min);
    io_detail::get_field(j, p, "price_max", c.price_max);
    io_detail::get_field(j, p, "discount_min", c.discount_min);
    io_detail::get_field(j, p, "discount_max", c.discount_max);
    io_detail::get_field(j, p, "heterogeneity", c.heterogeneity);
    io_detail::get_field(j, p, "seed", c.seed);
}

/// Node ids are paths: "Total", "Total/G1", "Total/G1/P03", ...
inline std::vector<Edge> synthetic_edges(const std::vector<std::size_t>& fanout) {
    std::vector<Edge> edges;
    std::vector<std::string> frontier{"Total"};
    for (std::size_t l = 0; l < fanout.size(); ++l) {
        const bool leaf = l + 1 == fanout.size();
        std::vector<std::string> next;
        std::size_t counter = 0;
        for (const auto& parent : frontier) {
            for (std::size_t c = 0; c < fanout[l]; ++c) {
                ++counter;
                std::string label = std::to_string(counter);
                if (label.size() < 2) label = "0" + label;
                const std::string id = parent + "/" + (leaf ? "P" : "G" + std::to_string(l + 1) + "_") + label;
                edges.emplace_back(parent, id);
                next.push_back(id);
            }
        }
        frontier = std::move(next);
    }
    return edges;
}

/// Seed of hierarchy `index`, mixed from the run seed so parallel and serial generation agree.
inline std::uint64_t hierarchy_seed(std::uint64_t seed, std::size_t index) {
    return io_detail::splitmix64(seed ^ io_detail::splitmix64(static_cast<std::uint64_t>(index) + 1));
}

inline HierSeriesSet generate_hierarchy(const SynthConfig& cfg, std::size_t index, std::shared_ptr<const Hierarchy> h) {
    std::mt19937_64 rng(hierarchy_seed(cfg.seed, index));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    const auto n = static_cast<Eigen::Index>(cfg.n_periods);
    const auto k = static_cast<Eigen::Index>(h->m_bottom());
    const auto first = static_cast<Eigen::Index>(h->first_bottom());
    const double noise = cfg.noise * std::exp2(cfg.heterogeneity * between(-1.0, 1.0));

    // Promotion calendars shared by the leaves of one parent.
    std::map<std::size_t, std::vector<bool>> group_calendar;
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto parent = *h->parent(static_cast<std::size_t>(first + j));
        auto& cal = group_calendar[parent];
        if (cal.empty()) {
            cal.resize(cfg.n_periods);
            for (std::size_t t = 0; t < cfg.n_periods; ++t) cal[t] = u(rng) < cfg.promo_prob;
        }
    }
    std::vector<double> common(cfg.n_periods);
    for (auto& c : common) c = z(rng);

    Eigen::MatrixXd bottom(k, n);
    Eigen::MatrixXd price = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h->m()), n);
    const double wc = std::sqrt(cfg.correlation), wo = std::sqrt(1.0 - cfg.correlation);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double base = between(cfg.base_min, cfg.base_max);
        const double slope = cfg.trend * between(-0.5, 1.0) * base;
        const double list_price = between(cfg.price_min, cfg.price_max);
        const bool synced = u(rng) < cfg.promo_sync;
        const auto& cal = group_calendar[*h->parent(static_cast<std::size_t>(first + j))];
        for (Eigen::Index t = 0; t < n; ++t) {
            const auto ts = static_cast<std::size_t>(t);
            const bool own_draw = u(rng) < cfg.promo_prob;
            const bool promo = synced ? cal[ts] : own_draw;
            const double eps = wc * common[ts] + wo * z(rng);
            const double disc = between(cfg.discount_min, cfg.discount_max);
            const double lift = between(cfg.lift_min, cfg.lift_max);
            double demand = base + slope * static_cast<double>(t) + noise * base * eps;
            if (promo) demand *= lift;
            bottom(j, t) = std::max(demand, 0.0);
            price(first + j, t) = promo ? list_price * (1.0 - disc) : list_price;
        }
    }
    const Eigen::VectorXd counts = h->summing() * Eigen::VectorXd::Ones(k);
    const Eigen::MatrixXd sums = h->summing() * price.bottomRows(k);
    for (Eigen::Index i = 0; i < first; ++i) price.row(i) = sums.row(i) / counts(i);

    std::string id = std::to_string(index + 1);
    const std::size_t width = std::to_string(cfg.n_hierarchies).size();
    while (id.size() < std::max<std::size_t>(width, 2)) id = "0" + id;
    return make_series_set("H" + id, h, aggregate_bottom(*h, bottom), price);
}

inline std::vector<HierSeriesSet> generate_synthetic(const SynthConfig& cfg, std::size_t jobs = 1) {
    cfg.validate();
    auto h = std::make_shared<const Hierarchy>(build_hierarchy(synthetic_edges(cfg.fanout)));
    std::vector<std::optional<HierSeriesSet>> slots(cfg.n_hierarchies);
    detail::parallel_for(cfg.n_hierarchies, jobs, [&](std::size_t i) { slots[i] = generate_hierarchy(cfg, i, h); });
    std::vector<HierSeriesSet> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

inline void to_json(nlohmann::json& j, const BaseModelSpec& s) {
    j = {{"kind", to_string(s.kind)},
         {"ar_order", s.ar_order},
         {"use_regressor", s.use_regressor},
         {"ridge", s.ridge},
         {"truncate_nonneg", s.truncate_nonneg}};
}

inline void from_json(const nlohmann::json& j, BaseModelSpec& s) {
    const std::string p = "model";
    io_detail::reject_unknown(j, p, {"kind", "ar_order", "use_regressor", "ridge", "truncate_nonneg"});
    if (j.contains("kind")) {
        std::string kind;
        io_detail::get_field(j, p, "kind", kind);
        try {
            s.kind = model_kind_from_string(kind);
        } catch (const ValidationError&) {
            throw ValidationError("model.kind: unknown value '" + kind + "' (expected reg_ar, ar, naive or mean)");
        }
    }
    io_detail::get_field(j, p, "ar_order", s.ar_order);
    io_detail::get_field(j, p, "use_regressor", s.use_regressor);
    io_detail::get_field(j, p, "ridge", s.ridge);
    io_detail::get_field(j, p, "truncate_nonneg", s.truncate_nonneg);
    if (!(s.ridge >= 0.0)) throw ValidationError("model.ridge: must be >= 0");
}

/// Off-line window p..r and on-line window r..online_end (periods), both stepping by h.
struct ChfWindows {
    std::size_t p = 26;
    std::size_t r = 84;
    std::size_t h = 4;
    std::optional<std::size_t> online_end;  ///< last period scored on-line; defaults to all data
    std::size_t seasonal_period = 1;
    LabelObjective objective = LabelObjective::unweighted;
    bool retrain = true;
};

struct RunConfig {
    BaseModelSpec model;
    ChfWindows chf;
    GbtConfig gbt;
    SynthConfig synth;
    double alpha = 0.05;
    Metric metric = Metric::mase;
    std::optional<std::size_t> jobs;

    void validate() const {
        gbt.validate();
        synth.validate();
        if (chf.h == 0) throw ValidationError("chf.h: must be >= 1");
        if (chf.p + chf.h > chf.r) throw ValidationError("chf.p/chf.r: need p + h <= r");
        if (chf.seasonal_period == 0) throw ValidationError("chf.seasonal_period: must be >= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("eval.alpha: must be in (0, 1)");
    }
};

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json chf = {{"p", c.chf.p},
                          {"r", c.chf.r},
                          {"h", c.chf.h},
                          {"seasonal_period", c.chf.seasonal_period},
                          {"objective", to_string(c.chf.objective)},
                          {"retrain", c.chf.retrain}};
    chf["online_end"] = c.chf.online_end ? nlohmann::json(*c.chf.online_end) : nlohmann::json(nullptr);
    nlohmann::json j = {{"model", c.model},
                        {"chf", chf},
                        {"gbt", c.gbt},
                        {"synth", c.synth},
                        {"eval", {{"alpha", c.alpha}, {"metric", to_string(c.metric)}}}};
    j["jobs"] = c.jobs ? nlohmann::json(*c.jobs) : nlohmann::json(nullptr);
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    io_detail::reject_unknown(j, "config", {"model", "chf", "gbt", "synth", "eval", "jobs"});
    if (j.contains("model")) c.model = j.at("model").get<BaseModelSpec>();
    if (j.contains("gbt")) c.gbt = j.at("gbt").get<GbtConfig>();
    if (j.contains("synth")) c.synth = j.at("synth").get<SynthConfig>();
    if (j.contains("chf")) {
        const auto& w = j.at("chf");
        io_detail::reject_unknown(w, "chf", {"p", "r", "h", "online_end", "seasonal_period", "objective", "retrain"});
        io_detail::get_field(w, "chf", "p", c.chf.p);
        io_detail::get_field(w, "chf", "r", c.chf.r);
        io_detail::get_field(w, "chf", "h", c.chf.h);
        if (w.contains("online_end") && !w.at("online_end").is_null()) {
            std::size_t e = 0;
            io_detail::get_field(w, "chf", "online_end", e);
            c.chf.online_end = e;
        }
        io_detail::get_field(w, "chf", "seasonal_period", c.chf.seasonal_period);
        if (w.contains("objective")) {
            std::string o;
            io_detail::get_field(w, "chf", "objective", o);
            try {
                c.chf.objective = label_objective_from_string(o);
            } catch (const ValidationError&) {
                throw ValidationError("chf.objective: unknown value '" + o + "' (expected unweighted or level_weighted)");
            }
        }
        io_detail::get_field(w, "chf", "retrain", c.chf.retrain);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        io_detail::reject_unknown(e, "eval", {"alpha", "metric"});
        io_detail::get_field(e, "eval", "alpha", c.alpha);
        if (e.contains("metric")) {
            std::string m;
            io_detail::get_field(e, "eval", "metric", m);
            try {
                c.metric = metric_from_string(m);
            } catch (const ValidationError&) {
                throw ValidationError("eval.metric: unknown value '" + m + "' (expected mase or rmsse)");
            }
        }
    }
    if (j.contains("jobs") && !j.at("jobs").is_null()) {
        std::size_t n = 0;
        io_detail::get_field(j, "config", "jobs", n);
        c.jobs = n;
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    return config_from_json(io_detail::parse_json(io_detail::read_file(path), path.string()));
}

/// Stable hash of the canonical (key-sorted) JSON form of the config. The
/// worker count is left out since it never changes results.
inline std::string config_hash(const RunConfig& c) {
    auto j = config_to_json(c);
    j.erase("jobs");
    return io_detail::hex64(io_detail::fnv1a(j.dump()));
}

/// Run-directory manifest. Holds no timestamps so reruns are byte-identical.
struct Manifest {
    std::string command;
    std::string config_hash;
    std::string registry_tag;
    nlohmann::json inputs = nlohmann::json::object();
    std::vector<std::string> outputs;
    nlohmann::json extra = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json j = {{"tool", "hfselect"},
                            {"version", kVersion},
                            {"gbt_format", kGbtFormatVersion},
                            {"command", command},
                            {"config_hash", config_hash},
                            {"label_encoding", {{"0", "BU"}, {"1", "TD"}, {"2", "COM"}}},
                            {"inputs", inputs},
                            {"outputs", outputs}};
        if (!registry_tag.empty()) j["registry_tag"] = registry_tag;
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        return j;
    }
};

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) { io_detail::write_file(path, m.to_json().dump(2) + "\n"); }

// CSV tables for results ------------------------------------------------------

inline std::string records_csv(std::span<const EvalRecord> recs) {
    std::string s = "hierarchy_id,origin,node_id,level,method,mase,rmsse,h,degenerate\n";
    for (const auto& r : recs)
        s += io_detail::csv_field(r.hierarchy_id) + "," + std::to_string(r.origin) + "," + io_detail::csv_field(r.node_id) + "," +
             std::to_string(r.level) + "," + io_detail::csv_field(r.method) + "," + io_detail::format_double(r.mase) + "," +
             io_detail::format_double(r.rmsse) + "," + std::to_string(r.h) + "," + (r.degenerate ? "1" : "0") + "\n";
    return s;
}

inline std::vector<EvalRecord> records_from_csv(const std::filesystem::path& path) {
    std::istringstream in(io_detail::read_file(path));
    std::string line;
    if (!std::getline(in, line) || io_detail::split_csv(line) != std::vector<std::string>{"hierarchy_id", "origin", "node_id", "level", "method", "mase", "rmsse", "h", "degenerate"})
        throw ValidationError(path.string() + ": not an evaluation-record file");
    std::vector<EvalRecord> out;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        const auto f = io_detail::split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(no);
        if (f.size() != 9) throw ValidationError(where + ": expected 9 fields");
        EvalRecord r;
        r.hierarchy_id = f[0];
        r.origin = static_cast<std::size_t>(io_detail::parse_long(f[1], where + " origin"));
        r.node_id = f[2];
        r.level = static_cast<std::size_t>(io_detail::parse_long(f[3], where + " level"));
        r.method = f[4];
        r.mase = io_detail::parse_double(f[5], where + " mase");
        r.rmsse = io_detail::parse_double(f[6], where + " rmsse");
        r.h = static_cast<std::size_t>(io_detail::parse_long(f[7], where + " h"));
        r.degenerate = f[8] == "1";
        out.push_back(std::move(r));
    }
    return out;
}

inline constexpr const char* kForecastHeader = "hierarchy_id,origin,method,node_id,step,forecast\n";

/// Appends one m x h forecast block in hierarchy order.
inline void append_forecasts(std::string& s, const std::string& hierarchy_id, std::size_t origin, const std::string& method, const Hierarchy& h,
                             const Eigen::MatrixXd& fc) {
    for (Eigen::Index i = 0; i < fc.rows(); ++i)
        for (Eigen::Index t = 0; t < fc.cols(); ++t)
            s += io_detail::csv_field(hierarchy_id) + "," + std::to_string(origin) + "," + io_detail::csv_field(method) + "," +
                 io_detail::csv_field(h.node(static_cast<std::size_t>(i))) + "," + std::to_string(t + 1) + "," +
                 io_detail::format_double(fc(i, t)) + "\n";
}

inline std::string forecasts_csv(std::span<const ReconciledOutput> outputs, std::span<const HierSeriesSet> datasets) {
    std::map<std::string, const HierSeriesSet*> by_id;
    for (const auto& d : datasets) by_id[d.id] = &d;
    std::string s = kForecastHeader;
    for (const auto& o : outputs) append_forecasts(s, o.hierarchy_id, o.origin, to_string(o.method), by_id.at(o.hierarchy_id)->tree(), o.forecasts);
    return s;
}

/// A forecast block read back from CSV; node ids in file order.
struct ForecastBlock {
    std::string hierarchy_id;
    std::size_t origin = 0;
    std::string method;
    std::vector<std::string> nodes;
    std::map<std::pair<std::string, std::size_t>, double> values;  ///< (node, step) -> forecast
};

inline std::vector<ForecastBlock> forecasts_from_csv(const std::filesystem::path& path) {
    std::istringstream in(io_detail::read_file(path));
    std::string line;
    if (!std::getline(in, line) || line + "\n" != kForecastHeader) throw ValidationError(path.string() + ": not a forecast file");
    std::vector<ForecastBlock> out;
    std::map<std::tuple<std::string, std::size_t, std::string>, std::size_t> index;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        const auto f = io_detail::split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(no);
        if (f.size() != 6) throw ValidationError(where + ": expected 6 fields");
        const auto origin = static_cast<std::size_t>(io_detail::parse_long(f[1], where + " origin"));
        auto [it, fresh] = index.try_emplace({f[0], origin, f[2]}, out.size());
        if (fresh) out.push_back({f[0], origin, f[2], {}, {}});
        auto& b = out[it->second];
        if (std::find(b.nodes.begin(), b.nodes.end(), f[3]) == b.nodes.end()) b.nodes.push_back(f[3]);
        const auto step = static_cast<std::size_t>(io_detail::parse_long(f[4], where + " step"));
        if (!b.values.emplace(std::make_pair(f[3], step), io_detail::parse_double(f[5], where + " forecast")).second)
            throw ValidationError(where + ": duplicate forecast");
    }
    return out;
}

inline std::string selections_csv(std::span<const Selection> sel) {
    std::string s = "hierarchy_id,origin,selected,p_bu,p_td,p_com,best\n";
    for (const auto& x : sel)
        s += io_detail::csv_field(x.hierarchy_id) + "," + std::to_string(x.origin) + "," + to_string(x.method) + "," +
             io_detail::format_double(x.probabilities[0]) + "," + io_detail::format_double(x.probabilities[1]) + "," +
             io_detail::format_double(x.probabilities[2]) + "," + (x.best >= 0 ? to_string(static_cast<Method>(x.best)) : "") + "\n";
    return s;
}

inline std::string training_csv(const ChfTrainingSet& ts) {
    std::string s = "hierarchy_id,origin,label,score_bu,score_td,score_com,tie";
    for (const auto& c : ts.columns()) s += "," + c;
    s += "\n";
    for (const auto& r : ts.rows) {
        s += io_detail::csv_field(r.hierarchy_id) + "," + std::to_string(r.origin) + "," + to_string(static_cast<Method>(r.label));
        for (double v : r.scores) s += "," + io_detail::format_double(v);
        s += r.tie ? ",1" : ",0";
        for (double v : r.features) s += "," + io_detail::format_double(v);
        s += "\n";
    }
    return s;
}

/// One row per hierarchy: level-mean features at `origin`.
inline std::string features_csv(std::span<const FeatureMatrix> fms) {
    if (fms.empty()) return "hierarchy_id,origin\n";
    std::string s = "hierarchy_id,origin";
    const auto levels = static_cast<std::size_t>(fms.front().level_means.rows());
    for (const auto& c : FeatureMatrix::column_names(*fms.front().registry, levels)) s += "," + c;
    s += "\n";
    for (const auto& fm : fms) {
        s += io_detail::csv_field(fm.hierarchy_id) + "," + std::to_string(fm.origin);
        for (double v : fm.row) s += "," + io_detail::format_double(v);
        s += "\n";
    }
    return s;
}

inline std::string level_table_csv(std::span<const LevelTable> tables) {
    std::string s;
    for (const auto& t : tables) {
        if (s.empty()) {
            s = "metric,method";
            for (std::size_t l = 0; l < t.levels; ++l) s += ",Level " + std::to_string(l);
            s += ",Average\n";
        }
        for (std::size_t j = 0; j < t.methods.size(); ++j) {
            s += std::string(to_string(t.metric)) + "," + io_detail::csv_field(t.methods[j]);
            for (Eigen::Index c = 0; c < t.cells.cols(); ++c) s += "," + io_detail::format_double(t.cells(static_cast<Eigen::Index>(j), c));
            s += "\n";
        }
    }
    return s;
}

/// Fixed-width text rendering of the level tables, three decimals.
inline std::string level_table_text(std::span<const LevelTable> tables) {
    std::ostringstream out;
    for (const auto& t : tables) {
        out << (t.metric == Metric::mase ? "MASE" : "RMSSE") << "\n";
        out << "         ";
        for (std::size_t l = 0; l < t.levels; ++l) out << "  Level " << l;
        out << "  Average\n";
        for (std::size_t j = 0; j < t.methods.size(); ++j) {
            std::string name = t.methods[j];
            name.resize(std::max<std::size_t>(name.size(), 9), ' ');
            out << name;
            for (Eigen::Index c = 0; c < t.cells.cols(); ++c) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%9.3f", t.cells(static_cast<Eigen::Index>(j), c));
                out << buf;
            }
            out << "\n";
        }
        out << "\n";
    }
    return out.str();
}

inline std::string mcb_csv(const McbResult& m) {
    std::string s = "method,mean_rank,lower,upper,significant,best,q,r,n\n";
    for (std::size_t j = 0; j < m.methods.size(); ++j)
        s += io_detail::csv_field(m.methods[j]) + "," + io_detail::format_double(m.mean_rank[j]) + "," + io_detail::format_double(m.lower[j]) +
             "," + io_detail::format_double(m.upper[j]) + "," + (m.significant[j] ? "1" : "0") + "," + (j == m.best ? "1" : "0") + "," +
             io_detail::format_double(m.q) + "," + io_detail::format_double(m.r) + "," + std::to_string(m.n) + "\n";
    return s;
}

inline std::string ratios_csv(std::span<const AccuracyRatio> ratios) {
    std::string s = "hierarchy_id,level,metric,benchmark,chf,benchmark_score,ratio,excluded\n";
    for (const auto& r : ratios)
        s += io_detail::csv_field(r.hierarchy_id) + "," + std::to_string(r.level) + "," + to_string(r.metric) + "," +
             io_detail::csv_field(r.benchmark) + "," + io_detail::format_double(r.chf) + "," + io_detail::format_double(r.bench) + "," +
             io_detail::format_double(r.ratio) + "," + (r.excluded ? "1" : "0") + "\n";
    return s;
}

inline std::string importance_csv(const GbtModel& m, const std::vector<std::string>& names) {
    std::string s = "rank,feature,splits\n";
    std::size_t rank = 0;
    for (const auto& [f, count] : feature_importance(m))
        s += std::to_string(++rank) + "," + io_detail::csv_field(f < names.size() ? names[f] : std::to_string(f)) + "," + std::to_string(count) + "\n";
    return s;
}

} // namespace hfselect
