// hfselect: command-line driver for the conditional hierarchical forecasting pipeline.
//
// Every subcommand reads and writes inside a run directory (--out, default
// "run"). Inputs default to the files earlier stages leave there, so
//   hfselect synth && hfselect train-chf && hfselect run-chf && hfselect evaluate
// runs the whole experiment. Exit status: 0 success, 1 invalid input, 2 failure.

#include "hfselect/chf.hpp"
#include "hfselect/detail/log.hpp"
#include "hfselect/eval.hpp"
#include "hfselect/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hfselect;

namespace {

struct Flags {
    std::string config, data, structure, out = "run", method, selector, records, metric;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t jobs = 0, origin = 0;
    bool no_retrain = false, truncate_nonneg = false, coherence = false;
    CLI::Option *alpha_opt = nullptr, *seed_opt = nullptr, *jobs_opt = nullptr, *origin_opt = nullptr, *metric_opt = nullptr;
};

struct Context {
    Flags flags;
    RunConfig cfg;
    fs::path out;
    std::size_t jobs = 1;
    Manifest manifest;

    fs::path data_path() const { return flags.data.empty() ? out / "data.csv" : fs::path(flags.data); }

    std::optional<StructureSpec> structure() const {
        if (!flags.structure.empty()) return load_structure(flags.structure);
        // Only fall back to the run directory's structure when the data also comes from there.
        if (flags.data.empty() && fs::exists(out / "structure.json")) return load_structure(out / "structure.json");
        return std::nullopt;
    }

    std::vector<HierSeriesSet> datasets() {
        const auto path = data_path();
        auto sets = load_dataset(path, structure());
        input("data", path);
        log::info("loaded " + std::to_string(sets.size()) + " hierarchies from " + path.string());
        return sets;
    }

    fs::path selector_path() const { return flags.selector.empty() ? out / "selector.json" : fs::path(flags.selector); }
    fs::path records_path() const { return flags.records.empty() ? out / "records.csv" : fs::path(flags.records); }

    void input(const std::string& role, const fs::path& p) {
        manifest.inputs[role] = {{"file", p.filename().string()}, {"fnv1a", io_detail::hex64(io_detail::fnv1a(io_detail::read_file(p)))}};
    }

    void emit(const std::string& name, const std::string& content) {
        io_detail::write_file(out / name, content);
        manifest.outputs.push_back(name);
    }

    void finish() {
        manifest.config_hash = config_hash(cfg);
        write_manifest(out / ("manifest." + manifest.command + ".json"), manifest);
    }

    std::size_t online_to(const std::vector<HierSeriesSet>& sets) const {
        std::size_t n = sets.front().periods();
        for (const auto& d : sets) n = std::min(n, d.periods());
        const std::size_t end = cfg.chf.online_end.value_or(n);
        if (end > n) throw ValidationError("chf.online_end: " + std::to_string(end) + " exceeds the " + std::to_string(n) + " observed periods");
        if (end < cfg.chf.r + cfg.chf.h) throw ValidationError("chf.online_end: no on-line origin fits after r");
        return end - cfg.chf.h;
    }

    ChfOptions chf_options() const { return {cfg.chf.seasonal_period, cfg.chf.objective, jobs}; }
};

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fixed(double v, int decimals = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

void check_origin_fits(const std::vector<HierSeriesSet>& sets, std::size_t origin, std::size_t h) {
    for (const auto& d : sets)
        if (origin + h > d.periods())
            throw ValidationError("origin " + std::to_string(origin) + " + h " + std::to_string(h) + " exceeds the periods of '" + d.id + "'");
}

std::vector<Method> chosen_methods(const Flags& f) {
    if (f.method.empty() || f.method == "all") return {all_methods.begin(), all_methods.end()};
    return {method_from_string(f.method)};
}

// Subcommands --------------------------------------------------------------

int cmd_synth(Context& ctx) {
    const Stopwatch sw;
    const auto sets = generate_synthetic(ctx.cfg.synth, ctx.jobs);
    ctx.emit("data.csv", dataset_csv(sets));
    ctx.emit("structure.json", structure_to_json(sets).dump(2) + "\n");
    std::cout << "synth: " << sets.size() << " hierarchies x " << sets.front().series() << " series x " << sets.front().periods()
              << " periods -> " << (ctx.out / "data.csv").string() << "\n";
    log::info("synth took " + fixed(sw.seconds(), 2) + " s");
    return 0;
}

// Coherence of a forecast file, block by block.
int check_forecast_coherence(Context& ctx, const fs::path& path) {
    const auto blocks = forecasts_from_csv(path);
    ctx.input("forecasts", path);
    const auto structure = ctx.structure();
    std::size_t bad = 0;
    for (const auto& b : blocks) {
        const std::vector<Edge>* edges = structure ? structure->edges_for(b.hierarchy_id) : nullptr;
        if (structure && !edges) throw ValidationError("structure file has no edges for hierarchy '" + b.hierarchy_id + "'");
        const Hierarchy h = build_hierarchy(edges ? *edges : infer_edges(b.nodes));
        std::size_t steps = 0;
        for (const auto& [key, v] : b.values) steps = std::max(steps, key.second);
        Eigen::MatrixXd fc(static_cast<Eigen::Index>(h.m()), static_cast<Eigen::Index>(steps));
        for (std::size_t i = 0; i < h.m(); ++i)
            for (std::size_t s = 1; s <= steps; ++s) {
                auto it = b.values.find({h.node(i), s});
                if (it == b.values.end())
                    throw ValidationError(b.hierarchy_id + " origin " + std::to_string(b.origin) + " " + b.method + ": missing forecast for '" +
                                          h.node(i) + "' step " + std::to_string(s));
                fc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s - 1)) = it->second;
            }
        const auto rep = check_coherence(h, fc, 1e-8);
        if (!rep.coherent()) {
            ++bad;
            std::cout << "incoherent: " << b.hierarchy_id << " origin " << b.origin << " " << b.method << " (max violation "
                      << io_detail::format_double(rep.max_violation) << ")\n";
        }
    }
    std::cout << "validate: " << blocks.size() << " forecast blocks, " << bad << " incoherent\n";
    return bad == 0 ? 0 : 1;
}

int cmd_validate(Context& ctx) {
    const auto path = ctx.data_path();
    const std::string text = io_detail::read_file(path);
    if (ctx.flags.coherence && text.rfind(kForecastHeader, 0) == 0) return check_forecast_coherence(ctx, path);
    const auto sets = ctx.datasets();
    std::size_t series = 0;
    for (const auto& d : sets) series += d.series();
    std::cout << "validate: " << sets.size() << " hierarchies, " << series << " series, coherent\n";
    return 0;
}

int cmd_features(Context& ctx) {
    const auto sets = ctx.datasets();
    const std::size_t origin = ctx.flags.origin_opt->count() ? ctx.flags.origin : ctx.cfg.chf.r;
    std::vector<FeatureMatrix> fms;
    for (const auto& d : sets) fms.push_back(feature_matrix(d, origin, ctx.cfg.chf.seasonal_period, ctx.jobs));
    ctx.emit("features.csv", features_csv(fms));

    std::string per = "hierarchy_id,node_id,level";
    for (const auto& name : fms.front().registry->names) per += "," + name;
    per += "\n";
    for (std::size_t k = 0; k < sets.size(); ++k) {
        const auto& h = sets[k].tree();
        for (std::size_t i = 0; i < h.m(); ++i) {
            per += io_detail::csv_field(sets[k].id) + "," + io_detail::csv_field(h.node(i)) + "," + std::to_string(h.level(i));
            for (double v : fms[k].per_series[i].values) per += "," + io_detail::format_double(v);
            per += "\n";
        }
    }
    ctx.emit("features_series.csv", per);
    ctx.manifest.registry_tag = fms.front().registry->tag;
    ctx.manifest.extra["origin"] = origin;
    std::cout << "features: " << fms.size() << " hierarchies at origin " << origin << ", " << fms.front().row.size() << " columns\n";
    return 0;
}

int cmd_forecast(Context& ctx) {
    const auto sets = ctx.datasets();
    const std::size_t origin = ctx.flags.origin_opt->count() ? ctx.flags.origin : ctx.cfg.chf.r;
    check_origin_fits(sets, origin, ctx.cfg.chf.h);
    std::vector<BaseForecasts> base(sets.size());
    detail::parallel_for(sets.size(), ctx.jobs, [&](std::size_t k) { base[k] = forecast_hierarchy(sets[k], ctx.cfg.model, origin, ctx.cfg.chf.h); });
    std::string s = kForecastHeader;
    std::size_t fallbacks = 0;
    for (std::size_t k = 0; k < sets.size(); ++k) {
        append_forecasts(s, sets[k].id, origin, "BASE", sets[k].tree(), base[k].forecasts);
        fallbacks += base[k].ridge_fallbacks;
    }
    ctx.emit("base_forecasts.csv", s);
    ctx.manifest.extra["origin"] = origin;
    ctx.manifest.extra["ridge_fallbacks"] = fallbacks;
    std::cout << "forecast: base forecasts for " << sets.size() << " hierarchies at origin " << origin << ", h = " << ctx.cfg.chf.h << "\n";
    return 0;
}

int cmd_reconcile(Context& ctx) {
    const auto methods = chosen_methods(ctx.flags);
    const auto sets = ctx.datasets();
    const std::size_t origin = ctx.flags.origin_opt->count() ? ctx.flags.origin : ctx.cfg.chf.r;
    check_origin_fits(sets, origin, ctx.cfg.chf.h);
    std::vector<OriginResult> results(sets.size());
    detail::parallel_for(sets.size(), ctx.jobs,
                         [&](std::size_t k) { results[k] = forecast_origin(sets[k], ctx.cfg.model, methods, origin, ctx.cfg.chf.h); });
    std::string s = kForecastHeader;
    for (std::size_t k = 0; k < sets.size(); ++k)
        for (std::size_t m = 0; m < methods.size(); ++m)
            append_forecasts(s, sets[k].id, origin, to_string(methods[m]), sets[k].tree(), results[k].reconciled[m]);
    ctx.emit("forecasts.csv", s);
    ctx.manifest.extra["origin"] = origin;
    std::cout << "reconcile: " << sets.size() << " hierarchies x " << methods.size() << " method(s) at origin " << origin << "\n";
    return 0;
}

int cmd_train_chf(Context& ctx) {
    const auto sets = ctx.datasets();
    const Stopwatch sw;
    const auto ts = build_training_set(sets, ctx.cfg.model, ctx.cfg.chf.p, ctx.cfg.chf.r, ctx.cfg.chf.h, ctx.chf_options());
    const double t_rows = sw.seconds();
    const Selector sel = train_selector(ts, ctx.cfg.gbt);
    for (const auto& w : sel.warnings) log::warn(w);
    ctx.emit("selector.json", selector_to_json(sel).dump(1) + "\n");
    ctx.emit("training.csv", training_csv(ts));
    if (sel.policy == SelectorPolicy::trained) ctx.emit("importance.csv", importance_csv(sel.model, ts.columns()));

    std::size_t correct = 0;
    if (sel.policy == SelectorPolicy::trained) {
        for (std::size_t i = 0; i < ts.rows.size(); ++i) {
            const auto q = sel.model.predict_proba(ts.rows[i].features);
            const auto k = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
            correct += sel.classes[k] == ts.rows[i].label ? 1 : 0;
        }
    } else {
        for (const auto& r : ts.rows) correct += r.label == sel.constant_label ? 1 : 0;
    }
    ctx.manifest.registry_tag = ts.registry->tag;
    ctx.manifest.extra["training_rows"] = ts.rows.size();
    ctx.manifest.extra["label_counts"] = {{"BU", ts.label_counts[0]}, {"TD", ts.label_counts[1]}, {"COM", ts.label_counts[2]}};
    ctx.manifest.extra["series_wins"] = {{"BU", ts.series_wins[0]}, {"TD", ts.series_wins[1]}, {"COM", ts.series_wins[2]}};
    ctx.manifest.extra["ties"] = ts.ties;
    ctx.manifest.extra["skipped"] = ts.skipped;
    ctx.manifest.extra["selector_policy"] = to_string(sel.policy);
    ctx.manifest.extra["warnings"] = sel.warnings;
    std::cout << "train-chf: " << ts.rows.size() << " rows (BU " << ts.label_counts[0] << ", TD " << ts.label_counts[1] << ", COM "
              << ts.label_counts[2] << "), " << ts.columns().size() << " features, training accuracy "
              << fixed(static_cast<double>(correct) / static_cast<double>(ts.rows.size())) << "\n";
    log::info("rows " + fixed(t_rows, 1) + " s, gbt " + fixed(sw.seconds() - t_rows, 1) + " s");
    return 0;
}

int cmd_run_chf(Context& ctx) {
    const auto sets = ctx.datasets();
    const auto sel_path = ctx.selector_path();
    const Selector sel = selector_from_json(io_detail::parse_json(io_detail::read_file(sel_path), sel_path.string()));
    ctx.input("selector", sel_path);
    const std::size_t to = ctx.online_to(sets);
    OnlineOptions opts{ctx.cfg.chf.retrain, ctx.cfg.gbt, ctx.chf_options()};
    const Stopwatch sw;
    std::optional<ChfTrainingSet> ts;
    if (opts.retrain && sel.policy == SelectorPolicy::trained)
        ts = build_training_set(sets, ctx.cfg.model, ctx.cfg.chf.p, ctx.cfg.chf.r, ctx.cfg.chf.h, ctx.chf_options());
    const auto run = run_online(sets, sel, ctx.cfg.model, ctx.cfg.chf.r, to, ctx.cfg.chf.h, opts, ts ? &*ts : nullptr);

    ctx.emit("selections.csv", selections_csv(run.selections));
    ctx.emit("chf_forecasts.csv", forecasts_csv(run.forecasts, sets));
    ctx.emit("records.csv", records_csv(run.records));
    if (run.retrains > 0) ctx.emit("selector_final.json", selector_to_json(run.selector).dump(1) + "\n");

    std::array<std::size_t, 3> picked{}, hits{};
    for (const auto& s : run.selections) {
        ++picked[static_cast<std::size_t>(s.method)];
        hits[static_cast<std::size_t>(s.method)] += s.best == static_cast<int>(s.method) ? 1 : 0;
    }
    const auto chf_records = records_for(run.records, "CHF");
    ctx.manifest.registry_tag = sel.registry_tag;
    ctx.manifest.extra["online_origins"] = {ctx.cfg.chf.r, to};
    ctx.manifest.extra["selections"] = {{"BU", picked[0]}, {"TD", picked[1]}, {"COM", picked[2]}};
    ctx.manifest.extra["chf_records"] = chf_records.size();
    ctx.manifest.extra["retrains"] = run.retrains;
    std::cout << "run-chf: " << run.selections.size() << " selections (BU " << picked[0] << ", TD " << picked[1] << ", COM " << picked[2]
              << "; hit rate " << fixed(static_cast<double>(hits[0] + hits[1] + hits[2]) / static_cast<double>(run.selections.size()))
              << "), " << chf_records.size() << " CHF records, " << run.retrains << " retrains\n";
    for (const char* m : {"CHF", "BU", "TD", "COM"})
        std::cout << "  mean MASE " << m << " " << fixed(mean_score(run.records, m, Metric::mase), 4) << "\n";
    log::info("run-chf took " + fixed(sw.seconds(), 1) + " s");
    return 0;
}

std::vector<EvalRecord> load_records(Context& ctx) {
    const auto p = ctx.records_path();
    auto recs = records_from_csv(p);
    ctx.input("records", p);
    if (recs.empty()) throw ValidationError(p.string() + ": no records");
    return recs;
}

int cmd_evaluate(Context& ctx) {
    const auto recs = load_records(ctx);
    std::vector<std::string> methods;
    for (const char* m : {"BU", "TD", "COM", "CHF"})
        if (std::any_of(recs.begin(), recs.end(), [&](const EvalRecord& r) { return r.method == m; })) methods.push_back(m);
    for (const auto& r : recs)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    const std::vector<LevelTable> tables{level_table(recs, Metric::mase, methods), level_table(recs, Metric::rmsse, methods)};
    ctx.emit("table.csv", level_table_csv(tables));
    const std::string text = level_table_text(tables);
    ctx.emit("table.txt", text);
    std::size_t degenerate = 0;
    for (const auto& r : recs) degenerate += r.degenerate ? 1 : 0;
    ctx.manifest.extra["records"] = recs.size();
    ctx.manifest.extra["degenerate"] = degenerate;
    std::cout << text;
    return 0;
}

int cmd_mcb(Context& ctx) {
    const auto recs = load_records(ctx);
    const auto res = mcb_test(recs, ctx.cfg.alpha, ctx.cfg.metric);
    ctx.emit("mcb.csv", mcb_csv(res));
    ctx.manifest.extra["alpha"] = ctx.cfg.alpha;
    ctx.manifest.extra["metric"] = to_string(ctx.cfg.metric);
    std::cout << "mcb: K = " << res.methods.size() << ", N = " << res.n << ", q = " << io_detail::format_double(res.q)
              << ", r = " << io_detail::format_double(res.r) << " (" << res.excluded << " degenerate instances excluded)\n";
    for (std::size_t j = 0; j < res.methods.size(); ++j)
        std::cout << "  " << res.methods[j] << " mean rank " << fixed(res.mean_rank[j], 4) << " [" << fixed(res.lower[j], 4) << ", "
                  << fixed(res.upper[j], 4) << "]" << (j == res.best ? " best" : res.significant[j] ? " worse than best" : "") << "\n";
    return 0;
}

int cmd_report(Context& ctx) {
    const auto recs = load_records(ctx);
    const auto ratios = accuracy_ratios(recs, "CHF");
    ctx.emit("ratios.csv", ratios_csv(ratios));
    std::string med = "level,metric,benchmark,median_ratio,count\n";
    std::ostringstream text;
    text << "Median CHF / benchmark accuracy ratio (below 1 favours CHF)\n";
    for (const auto& s : ratio_medians(ratios)) {
        med += std::to_string(s.level) + "," + to_string(s.metric) + "," + s.benchmark + "," + io_detail::format_double(s.median) + "," +
               std::to_string(s.count) + "\n";
        text << "  level " << s.level << " " << to_string(s.metric) << " vs " << s.benchmark << ": " << fixed(s.median) << " (n = " << s.count
             << ")\n";
    }
    ctx.emit("ratio_medians.csv", med);

    fs::path sel_path = ctx.out / "selector_final.json";
    if (!ctx.flags.selector.empty() || !fs::exists(sel_path)) sel_path = ctx.selector_path();
    if (fs::exists(sel_path)) {
        const Selector sel = selector_from_json(io_detail::parse_json(io_detail::read_file(sel_path), sel_path.string()));
        ctx.input("selector", sel_path);
        if (sel.policy == SelectorPolicy::trained) {
            const auto reg = feature_registry(ctx.cfg.chf.seasonal_period);
            if (reg->tag != sel.registry_tag)
                throw ValidationError("selector was trained with feature registry '" + sel.registry_tag + "', config gives '" + reg->tag + "'");
            if (sel.width % reg->size() != 0) throw ValidationError("selector feature width does not match its registry");
            const auto names = FeatureMatrix::column_names(*reg, sel.width / reg->size());
            ctx.emit("importance.csv", importance_csv(sel.model, names));
            text << "Most used features (split counts)\n";
            std::size_t shown = 0;
            for (const auto& [f, count] : feature_importance(sel.model)) {
                if (++shown > 10) break;
                text << "  " << names[f] << " " << count << "\n";
            }
        }
    }
    ctx.emit("report.txt", text.str());
    std::cout << text.str();
    return 0;
}

RunConfig resolve_config(const Flags& f) {
    RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (f.seed_opt->count()) {
        c.synth.seed = f.seed;
        c.gbt.seed = f.seed;
    }
    if (f.alpha_opt->count()) c.alpha = f.alpha;
    if (f.metric_opt->count()) c.metric = metric_from_string(f.metric);
    if (f.jobs_opt->count()) c.jobs = f.jobs;
    if (f.no_retrain) c.chf.retrain = false;
    if (f.truncate_nonneg) c.model.truncate_nonneg = true;
    c.validate();
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hfselect: per-hierarchy selection of forecast reconciliation methods"};
    app.require_subcommand(1);
    Flags f;
    app.add_option("--config", f.config, "Run-config JSON");
    app.add_option("--data", f.data, "Input CSV (default <out>/data.csv)");
    app.add_option("--structure", f.structure, "Structure JSON (default <out>/structure.json, else node-id paths)");
    app.add_option("--out", f.out, "Run directory")->capture_default_str();
    app.add_option("--method", f.method, "Reconciliation method: bu, td, com (mint) or all");
    f.alpha_opt = app.add_option("--alpha", f.alpha, "MCB significance level");
    f.seed_opt = app.add_option("--seed", f.seed, "Seed for the generator and the classifier");
    f.jobs_opt = app.add_option("--jobs", f.jobs, "Worker threads (default: available parallelism)")->check(CLI::PositiveNumber);
    f.metric_opt = app.add_option("--metric", f.metric, "mase or rmsse");
    f.origin_opt = app.add_option("--origin", f.origin, "Forecast origin in periods (default chf.r)");
    app.add_option("--selector", f.selector, "Selector bundle (default <out>/selector.json)");
    app.add_option("--records", f.records, "Evaluation records (default <out>/records.csv)");
    app.add_flag("--no-retrain", f.no_retrain, "Keep the off-line selector fixed during the on-line phase");
    app.add_flag("--truncate-nonneg", f.truncate_nonneg, "Clamp base forecasts at zero");

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(Context&);
    };
    const std::vector<Sub> subs{
        {"validate", "Load and check a dataset, or with --coherence a forecast file", cmd_validate},
        {"synth", "Generate a synthetic dataset", cmd_synth},
        {"features", "Write level-mean and per-series features at an origin", cmd_features},
        {"forecast", "Write base forecasts at an origin", cmd_forecast},
        {"reconcile", "Write reconciled forecasts at an origin", cmd_reconcile},
        {"train-chf", "Build the off-line training set and train the selector", cmd_train_chf},
        {"run-chf", "Run the on-line phase and write selections, forecasts and records", cmd_run_chf},
        {"evaluate", "Per-level accuracy tables from evaluation records", cmd_evaluate},
        {"mcb", "Multiple comparisons with the best over evaluation records", cmd_mcb},
        {"report", "Accuracy ratios and feature-importance ranking", cmd_report},
    };
    std::map<CLI::App*, const Sub*> by_app;
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(s.name, s.help)->fallthrough();
        if (std::string(s.name) == "validate") sub->add_flag("--coherence", f.coherence, "Check forecast coherence at 1e-8");
        by_app[sub] = &s;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        Context ctx;
        ctx.flags = f;
        ctx.cfg = resolve_config(f);
        ctx.out = f.out;
        ctx.jobs = ctx.cfg.jobs.value_or(detail::default_jobs());
        for (auto* sub : app.get_subcommands()) {
            const Sub* s = by_app.at(sub);
            ctx.manifest.command = s->name;
            if (!f.config.empty()) ctx.input("config", f.config);
            const int rc = s->run(ctx);
            if (std::string(s->name) != "validate") ctx.finish();
            return rc;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
