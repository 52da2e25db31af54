#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "icl/config.hpp"
#include "icl/eval.hpp"
#include "icl/hash.hpp"

namespace icl::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct CliOptions {
    fs::path config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;  // comma-separated list allowed
    std::optional<std::size_t> k;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    bool offline = false;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run context
// ---------------------------------------------------------------------------

/// A loaded config with overrides applied, the task, datasets, backend, and
/// a fresh run directory named by config hash + timestamp.
struct Context {
    config::RunConfig cfg;
    corpus::Task task;
    std::vector<corpus::Example> train;
    std::vector<corpus::Example> test;
    lm::LmBackendPtr backend;
    fs::path run_dir;
    std::string config_hash;

    /// Reports embed the effective config and the backend's call counters;
    /// timestamps stay inside the meta block so reruns are byte-identical
    /// outside it.
    json report_shell(const std::string& command) const {
        return json{{"meta",
                     json{{"created_at", detail::timestamp_utc()},
                          {"command", command},
                          {"config_hash", config_hash}}},
                    {"config", cfg.echo}};
    }

    void attach_cache_stats(json& report) const {
        auto s = backend->stats();
        report["cache"] = json{{"hits", s.cache_hits},
                               {"upstream_calls", s.upstream_calls},
                               {"probe_calls", s.probe_calls}};
    }

    fs::path write_json(const std::string& name, const json& j) const {
        fs::path path = run_dir / name;
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        out << j.dump(2) << '\n';
        return path;
    }

    fs::path write_text(const std::string& name, const std::string& text) const {
        fs::path path = run_dir / name;
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
        return path;
    }
};

inline void apply_overrides(config::RunConfig& cfg, const CliOptions& opts) {
    if (opts.seed) {
        cfg.seeds = {*opts.seed};
        cfg.pool_seed = *opts.seed;
        cfg.pool_seed_set = true;
        cfg.echo["eval"]["seeds"] = cfg.seeds;
        cfg.echo["sampling"]["pool_seed"] = cfg.pool_seed;
    }
    if (opts.method) {
        auto methods = detail::split_csv(*opts.method);
        if (methods.size() == 1) {
            cfg.method = select::method_from_string(methods[0]);
            cfg.echo["sampling"]["method"] = methods[0];
        }
        // multi-method lists are consumed per command; validate all names now
        for (const auto& m : methods) select::method_from_string(m);
    }
    if (opts.k) {
        cfg.k = *opts.k;
        cfg.k_shots = *opts.k;
        cfg.echo["sampling"]["k"] = cfg.k;
        cfg.echo["eval"]["k_shots"] = cfg.k_shots;
    }
    if (opts.endpoint) {
        cfg.backend.endpoint = *opts.endpoint;
        cfg.echo["model"]["endpoint"] = *opts.endpoint;
    }
    if (opts.model) {
        cfg.backend.model_name = *opts.model;
        cfg.echo["model"]["name"] = *opts.model;
    }
    if (opts.offline) {
        cfg.backend.kind = lm::BackendKind::cache_replay;
        cfg.echo["model"]["kind"] = "cache-replay";
    }
}

inline Context make_context(const CliOptions& opts, bool need_train, bool need_test) {
    Context ctx{config::load_config(opts.config_path), {}, {}, {}, nullptr, {}, {}};
    apply_overrides(ctx.cfg, opts);
    ctx.task = config::load_task_for(ctx.cfg);

    if (need_train || !ctx.cfg.train_file.empty()) {
        if (ctx.cfg.train_file.empty()) {
            if (need_train) throw ConfigError("this command needs task.train_file");
        } else {
            ctx.train = corpus::load_dataset(ctx.cfg.train_file, ctx.cfg.schema, ctx.task.space.get());
        }
    }
    if (need_test) {
        if (ctx.cfg.test_file.empty()) throw ConfigError("this command needs task.test_file");
        ctx.test = corpus::load_dataset(ctx.cfg.test_file, ctx.cfg.schema, ctx.task.space.get());
    }
    ctx.backend = config::make_backend(ctx.cfg, ctx.task, ctx.train);

    ctx.config_hash = sha256_hex(ctx.cfg.echo.dump()).substr(0, 12);
    fs::path dir = ctx.cfg.output_dir / (ctx.config_hash + "-" + detail::timestamp_utc());
    for (int suffix = 2; fs::exists(dir); ++suffix) {
        dir = ctx.cfg.output_dir /
              (ctx.config_hash + "-" + detail::timestamp_utc() + "-" + std::to_string(suffix));
    }
    fs::create_directories(dir);
    ctx.run_dir = dir;
    return ctx;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_probe_bias(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, false, false);
    auto report =
        calib::probe_template_bias(*ctx.task.tmpl, ctx.cfg.cf, ctx.task.space, *ctx.backend);

    json j = ctx.report_shell("probe-bias");
    j.update(calib::bias_probe_to_json(report, ctx.cfg.cf));
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("bias_probe.json", j);
    auto plot = ctx.write_text("bias_probe_plot.tsv", calib::bias_probe_plot_data(report));

    out << "template bias on " << report.task_name << " / " << report.model_name << ": label '"
        << report.pcf.space->verbalizers[static_cast<std::size_t>(report.max_label)] << "' at "
        << report.max_prob << "\n";
    out << "wrote " << path.string() << "\n";
    out << "wrote " << plot.string() << "\n";
    return 0;
}

namespace detail {

struct ScoredPool {
    corpus::CandidatePool pool;
    std::optional<calib::CalibrationVector> cal;
    std::vector<select::ScoredCandidate> scored;
};

/// Pool → (optional) content-free calibrator → zero-shot scores.
inline ScoredPool score_configured_pool(Context& ctx, bool with_calibration) {
    if (ctx.train.empty()) throw ConfigError("this command needs task.train_file");
    ScoredPool sp;
    const std::size_t n = std::min(ctx.cfg.pool_size, ctx.train.size());
    sp.pool = corpus::subsample_pool(ctx.train, n, ctx.cfg.pool_seed,
                                     ctx.cfg.train_file.stem().string());
    if (with_calibration) {
        sp.cal = calib::make_calibrator(
            calib::estimate_pcf(*ctx.task.tmpl, ctx.cfg.cf, ctx.task.space, *ctx.backend).pcf);
    }
    sp.scored = select::score_pool(sp.pool, *ctx.task.tmpl, ctx.task.space, *ctx.backend, sp.cal,
                                   ctx.cfg.concurrency);
    return sp;
}

inline std::vector<corpus::Example> test_subset(const Context& ctx, std::uint64_t seed) {
    const std::size_t n = std::min(ctx.cfg.test_subsample, ctx.test.size());
    return corpus::subsample_pool(ctx.test, n, seed ^ eval::kTestSeedXor,
                                  ctx.cfg.test_file.stem().string())
        .examples;
}

inline std::map<std::string, int> gold_map(const std::vector<select::ScoredCandidate>& scored) {
    std::map<std::string, int> gold;
    for (const auto& c : scored) {
        if (!c.example.gold_label) {
            throw DataError("pool candidate '" + c.example.id + "' has no gold label");
        }
        gold[c.example.id] = *c.example.gold_label;
    }
    return gold;
}

inline std::vector<eval::Demo> demos_of(const select::SelectionReport& sel) {
    std::vector<eval::Demo> demos;
    for (const auto& c : sel.selected) {
        if (!c.example.gold_label) {
            throw DataError("selected candidate '" + c.example.id + "' has no gold label");
        }
        demos.emplace_back(c.example, *c.example.gold_label);
    }
    return demos;
}

}  // namespace detail

/// Scores the sub-sampled pool (raw and calibrated) and writes the
/// line-delimited scored-pool file.
inline int cmd_score(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, false);
    auto sp = detail::score_configured_pool(ctx, true);

    auto jsonl = ctx.write_text("scored_pool.jsonl", select::scored_pool_to_jsonl(sp.scored));
    json meta = ctx.report_shell("score");
    meta["pool_fingerprint"] = select::pool_fingerprint(sp.scored);
    meta["pool_size"] = sp.pool.examples.size();
    meta["calibration"] = json{{"w_diag", sp.cal->w_diag},
                               {"b", sp.cal->b},
                               {"pcf", sp.cal->source_pcf.probs}};
    ctx.attach_cache_stats(meta);
    auto mpath = ctx.write_json("scored_pool_meta.json", meta);

    out << "scored " << sp.scored.size() << " candidates\n";
    out << "wrote " << jsonl.string() << "\n";
    out << "wrote " << mpath.string() << "\n";
    return 0;
}

/// Algorithm entry point: subsample, calibrate (CBS methods), score, rank,
/// and print the chosen examples for annotation.
inline int cmd_select(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, false);
    if (ctx.cfg.method == select::Method::random && !ctx.cfg.pool_seed_set) {
        throw ConfigError("random selection requires an explicit seed (--seed or sampling.pool_seed)");
    }
    auto sp = detail::score_configured_pool(ctx, select::uses_calibration(ctx.cfg.method));
    auto sel = select::select_top_k(sp.scored, ctx.cfg.k, ctx.cfg.method, ctx.cfg.pool_seed, sp.cal);

    json j = ctx.report_shell("select");
    j.update(select::selection_report_to_json(sel));
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("selection.json", j);

    out << "selected " << sel.selected.size() << " of " << sp.scored.size() << " candidates ("
        << select::to_string(sel.method) << ")\n";
    for (std::size_t i = 0; i < sel.selected.size(); ++i) {
        const auto& c = sel.selected[i];
        out << "# " << (i + 1) << "  id=" << c.example.id << "  H_raw=" << c.entropy_raw;
        if (c.entropy_cal) out << "  H_cal=" << *c.entropy_cal;
        out << "\n";
        for (const auto& [field, value] : c.example.input_fields) {
            out << field << ": " << value << "\n";
        }
    }
    out << "wrote " << path.string() << "\n";
    return 0;
}

/// Full experiment per the evaluation protocol; accepts a comma-separated
/// --method list and emits one summary row per method.
inline int cmd_evaluate(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, true);
    std::vector<std::string> methods =
        opts.method ? detail::split_csv(*opts.method)
                    : std::vector<std::string>{select::to_string(ctx.cfg.method)};

    std::string summary = "task\tmodel\tmethod\tk\tmean\tstd\tformatted\n";
    for (const auto& name : methods) {
        eval::ExperimentSetup setup;
        setup.tmpl = ctx.task.tmpl;
        setup.space = ctx.task.space;
        setup.train = ctx.train;
        setup.test = ctx.test;
        setup.backend = ctx.backend;
        setup.method = select::method_from_string(name);
        setup.pool_size = std::min(ctx.cfg.pool_size, ctx.train.size());
        setup.k_shots = ctx.cfg.k_shots;
        setup.test_subsample = ctx.cfg.test_subsample;
        setup.seeds = ctx.cfg.seeds;
        setup.post_calibrate = ctx.cfg.post_calibrate;
        setup.cf = ctx.cfg.cf;
        setup.concurrency = ctx.cfg.concurrency;
        setup.train_name = ctx.cfg.train_file.stem().string();
        setup.test_name = ctx.cfg.test_file.stem().string();

        auto report = eval::run_experiment(setup);

        json j = ctx.report_shell("evaluate");
        j.update(eval::report_to_json(report));
        j["prediction_log"] = "predictions-" + name + ".jsonl";
        ctx.attach_cache_stats(j);
        ctx.write_json("report-" + name + ".json", j);
        ctx.write_text("predictions-" + name + ".jsonl",
                       eval::predictions_to_jsonl(report.predictions));

        char formatted[64];
        std::snprintf(formatted, sizeof(formatted), "%.1f_%.1f", 100.0 * report.mean,
                      100.0 * report.std_dev);
        summary += ctx.task.tmpl->task_name + '\t' + ctx.backend->model_name() + '\t' + name +
                   '\t' + std::to_string(ctx.cfg.k_shots) + '\t' + std::to_string(report.mean) +
                   '\t' + std::to_string(report.std_dev) + '\t' + formatted + '\n';
        out << name << ": mean=" << report.mean << " std=" << report.std_dev << "\n";
    }
    auto spath = ctx.write_text("summary.tsv", summary);
    out << "wrote " << spath.string() << "\n";
    out << "run dir: " << ctx.run_dir.string() << "\n";
    return 0;
}

/// Class-balance / permutation sweep: every k-shot label pattern, filled per
/// method, evaluated on the test subset. Gold labels are assumed available.
inline int cmd_sweep_patterns(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, true);
    std::vector<std::string> methods =
        opts.method ? detail::split_csv(*opts.method)
                    : std::vector<std::string>{"random", "max_entropy", "max_ig", "cbs_max_ig"};

    auto sp = detail::score_configured_pool(ctx, true);
    auto gold = detail::gold_map(sp.scored);
    auto test = detail::test_subset(ctx, ctx.cfg.pool_seed);
    auto patterns =
        eval::enumerate_patterns(ctx.cfg.k_shots, ctx.task.space->num_labels());

    json rows = json::array();
    std::string tsv = "pattern\tbalanced\tmethod\taccuracy\n";
    for (const auto& pattern : patterns) {
        std::string pname;
        for (int c : pattern.sequence) pname += std::to_string(c);
        for (const auto& name : methods) {
            auto method = select::method_from_string(name);
            auto demos = eval::select_for_pattern(sp.scored, pattern, method, gold,
                                                  ctx.cfg.pool_seed);
            auto outcome = eval::evaluate(demos, test, *ctx.task.tmpl, ctx.task.space,
                                          *ctx.backend, {}, ctx.cfg.concurrency);
            rows.push_back(json{{"pattern", pname},
                                {"balanced", pattern.balanced},
                                {"method", name},
                                {"accuracy", outcome.accuracy}});
            tsv += pname + '\t' + (pattern.balanced ? "1" : "0") + '\t' + name + '\t' +
                   std::to_string(outcome.accuracy) + '\n';
        }
    }
    json j = ctx.report_shell("sweep-patterns");
    j["patterns"] = std::move(rows);
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("pattern_sweep.json", j);
    auto tpath = ctx.write_text("pattern_sweep.tsv", tsv);
    out << patterns.size() << " patterns x " << methods.size() << " methods\n";
    out << "wrote " << path.string() << "\n";
    out << "wrote " << tpath.string() << "\n";
    return 0;
}

/// Order probing over the selected demos, then the initial/reordered
/// accuracies with and without post-calibration.
inline int cmd_probe_order(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, true);
    auto sp = detail::score_configured_pool(ctx, select::uses_calibration(ctx.cfg.method));
    auto sel = select::select_top_k(sp.scored, ctx.cfg.k_shots, ctx.cfg.method, ctx.cfg.pool_seed,
                                    sp.cal);
    auto demos = detail::demos_of(sel);

    // probing set: remaining pool candidates, label-free by construction
    std::set<std::string> chosen;
    for (const auto& c : sel.selected) chosen.insert(c.example.id);
    std::vector<corpus::Example> remaining;
    for (const auto& e : sp.pool.examples) {
        if (!chosen.count(e.id)) remaining.push_back(e);
    }
    if (remaining.empty()) throw ConfigError("no pool candidates left to probe order with");
    auto probe_pool = corpus::subsample_pool(
        remaining, std::min(ctx.cfg.probe_set_size, remaining.size()),
        ctx.cfg.pool_seed ^ eval::kTestSeedXor, "probe");

    auto probe = eval::probe_order(demos, probe_pool.examples, *ctx.task.tmpl, ctx.task.space,
                                   *ctx.backend, ctx.cfg.max_permutations, ctx.cfg.pool_seed,
                                   ctx.cfg.concurrency);

    auto test = detail::test_subset(ctx, ctx.cfg.pool_seed);
    auto post_cal_initial = eval::post_calibrate_context(demos, *ctx.task.tmpl, ctx.cfg.cf,
                                                         ctx.task.space, *ctx.backend);
    auto post_cal_best = eval::post_calibrate_context(probe.best_demos, *ctx.task.tmpl, ctx.cfg.cf,
                                                      ctx.task.space, *ctx.backend);
    auto acc = [&](const std::vector<eval::Demo>& d,
                   const std::optional<calib::CalibrationVector>& pc) {
        return eval::evaluate(d, test, *ctx.task.tmpl, ctx.task.space, *ctx.backend, pc,
                              ctx.cfg.concurrency)
            .accuracy;
    };

    json evaluated = json::array();
    for (const auto& [perm, h] : probe.evaluated) {
        evaluated.push_back(json{{"permutation", perm}, {"global_entropy", h}});
    }
    json j = ctx.report_shell("probe-order");
    j["best_permutation"] = probe.best_permutation;
    j["best_global_entropy"] = probe.best_entropy;
    j["permutations"] = std::move(evaluated);
    j["accuracy"] = json{{"initial", acc(demos, {})},
                         {"reorder", acc(probe.best_demos, {})},
                         {"post_cal", acc(demos, post_cal_initial)},
                         {"reorder_post_cal", acc(probe.best_demos, post_cal_best)}};
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("order_probe.json", j);
    out << "best permutation entropy " << probe.best_entropy << " over "
        << probe.evaluated.size() << " orders\n";
    out << "wrote " << path.string() << "\n";
    return 0;
}

/// Gold-vs-random-label ablation across the configured seeds.
inline int cmd_ablate_labels(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, true);
    json rows = json::array();
    std::vector<double> gold_accs, random_accs;
    for (auto seed : ctx.cfg.seeds) {
        Context seed_ctx = ctx;
        seed_ctx.cfg.pool_seed = seed;
        auto sp = detail::score_configured_pool(seed_ctx,
                                                select::uses_calibration(ctx.cfg.method));
        auto sel =
            select::select_top_k(sp.scored, ctx.cfg.k_shots, ctx.cfg.method, seed, sp.cal);
        auto demos = detail::demos_of(sel);
        auto random_demos =
            eval::randomize_labels(demos, *ctx.task.space, seed ^ eval::kAblationSeedXor);
        auto test = detail::test_subset(ctx, seed);
        auto acc_gold = eval::evaluate(demos, test, *ctx.task.tmpl, ctx.task.space, *ctx.backend,
                                       {}, ctx.cfg.concurrency)
                            .accuracy;
        auto acc_random = eval::evaluate(random_demos, test, *ctx.task.tmpl, ctx.task.space,
                                         *ctx.backend, {}, ctx.cfg.concurrency)
                              .accuracy;
        gold_accs.push_back(acc_gold);
        random_accs.push_back(acc_random);
        rows.push_back(json{{"seed", seed}, {"gold", acc_gold}, {"random", acc_random}});
    }
    const double gold_mean = eval::mean_of(gold_accs);
    const double random_mean = eval::mean_of(random_accs);
    json j = ctx.report_shell("ablate-labels");
    j["per_seed"] = std::move(rows);
    j["gold"] = json{{"mean", gold_mean}, {"std", eval::population_std(gold_accs)}};
    j["random"] = json{{"mean", random_mean}, {"std", eval::population_std(random_accs)}};
    j["drop_percent"] =
        gold_mean > 0.0 ? 100.0 * (gold_mean - random_mean) / gold_mean : 0.0;
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("label_ablation.json", j);
    out << "gold mean=" << gold_mean << " random mean=" << random_mean << "\n";
    out << "wrote " << path.string() << "\n";
    return 0;
}

/// One-shot accuracy for each of the top-K ranked candidates, with a random
/// reference band.
inline int cmd_topk_sweep(const CliOptions& opts, std::ostream& out) {
    auto ctx = make_context(opts, true, true);
    const bool calibrated = select::uses_calibration(ctx.cfg.method);
    auto sp = detail::score_configured_pool(ctx, calibrated);
    auto test = detail::test_subset(ctx, ctx.cfg.pool_seed);
    auto sweep = eval::top_k_sweep(sp.scored, calibrated,
                                   std::min(ctx.cfg.k_max, sp.scored.size()), test,
                                   *ctx.task.tmpl, ctx.task.space, *ctx.backend, ctx.cfg.seeds,
                                   ctx.cfg.concurrency);

    json j = ctx.report_shell("topk-sweep");
    j["accuracy_by_rank"] = sweep.accuracy_by_rank;
    j["random"] = json{{"mean", sweep.random_mean},
                       {"std", sweep.random_std},
                       {"accuracies", sweep.random_accuracies}};
    ctx.attach_cache_stats(j);
    auto path = ctx.write_json("topk_sweep.json", j);

    std::string tsv = "rank\taccuracy\trandom_mean\trandom_std\n";
    for (std::size_t r = 0; r < sweep.accuracy_by_rank.size(); ++r) {
        tsv += std::to_string(r + 1) + '\t' + std::to_string(sweep.accuracy_by_rank[r]) + '\t' +
               std::to_string(sweep.random_mean) + '\t' + std::to_string(sweep.random_std) + '\n';
    }
    auto tpath = ctx.write_text("topk_sweep.tsv", tsv);
    out << "wrote " << path.string() << "\n";
    out << "wrote " << tpath.string() << "\n";
    return 0;
}

/// Cache maintenance: stats, verify, gc.
inline int cmd_cache(const CliOptions& opts, const std::string& action, std::ostream& out,
                     std::ostream& err) {
    auto cfg = config::load_config(opts.config_path);
    CliOptions o = opts;
    apply_overrides(cfg, o);
    if (cfg.cache_dir.empty()) throw ConfigError("config has no cache_dir");
    lm::ResponseCache cache(cfg.cache_dir);

    if (action == "stats") {
        auto counts = cache.scan_counts();
        cache.rewrite_manifest(counts);
        std::size_t total = 0;
        for (const auto& [model, n] : counts) {
            out << model << "\t" << n << "\n";
            total += n;
        }
        out << "total\t" << total << "\n";
        return 0;
    }
    if (action == "verify") {
        auto corrupt = cache.verify();
        if (corrupt.empty()) {
            out << "cache clean\n";
            return 0;
        }
        for (const auto& key : corrupt) err << "corrupt entry: " << key << "\n";
        return 1;
    }
    if (action == "gc") {
        auto removed = cache.gc({cfg.backend.model_name});
        out << "removed " << removed << " entries for models other than '"
            << cfg.backend.model_name << "'\n";
        return 0;
    }
    throw ConfigError("unknown cache action: " + action);
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Demonstration selection for in-context learning"};
    app.require_subcommand(1);

    CliOptions opts;
    std::string method_str, endpoint_str, model_str;
    std::uint64_t seed_val = 0;
    std::size_t k_val = 0;
    std::string cache_action;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "experiment config file")->required();
        cmd->add_option("--seed", seed_val, "override: single seed for sampling and eval");
        cmd->add_option("--method", method_str, "override: selection method (comma list allowed)");
        cmd->add_option("--k", k_val, "override: number of demonstrations");
        cmd->add_option("--endpoint", endpoint_str, "override: model endpoint URL");
        cmd->add_option("--model", model_str, "override: model name");
        cmd->add_flag("--offline", opts.offline, "replay from cache; fail on miss");
    };

    auto* probe_bias = app.add_subcommand("probe-bias", "estimate template bias");
    auto* score = app.add_subcommand("score", "score the candidate pool");
    auto* selectc = app.add_subcommand("select", "rank and select demonstrations");
    auto* evaluate = app.add_subcommand("evaluate", "run the full experiment");
    auto* sweep = app.add_subcommand("sweep-patterns", "class-balance pattern sweep");
    auto* order = app.add_subcommand("probe-order", "demonstration order probing");
    auto* ablate = app.add_subcommand("ablate-labels", "gold vs random label ablation");
    auto* topk = app.add_subcommand("topk-sweep", "per-rank one-shot accuracy sweep");
    auto* cachec = app.add_subcommand("cache", "cache maintenance");
    for (auto* cmd : {probe_bias, score, selectc, evaluate, sweep, order, ablate, topk, cachec}) {
        add_common(cmd);
    }
    cachec->add_option("action", cache_action, "stats | verify | gc")->required();

    std::vector<const char*> argv;
    argv.push_back("icl");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n";
        return 2;
    }

    auto* cmd = app.get_subcommands().front();
    if (cmd->count("--seed")) opts.seed = seed_val;
    if (cmd->count("--method")) opts.method = method_str;
    if (cmd->count("--k")) opts.k = k_val;
    if (cmd->count("--endpoint")) opts.endpoint = endpoint_str;
    if (cmd->count("--model")) opts.model = model_str;

    try {
        if (cmd == probe_bias) return cmd_probe_bias(opts, out);
        if (cmd == score) return cmd_score(opts, out);
        if (cmd == selectc) return cmd_select(opts, out);
        if (cmd == evaluate) return cmd_evaluate(opts, out);
        if (cmd == sweep) return cmd_sweep_patterns(opts, out);
        if (cmd == order) return cmd_probe_order(opts, out);
        if (cmd == ablate) return cmd_ablate_labels(opts, out);
        if (cmd == topk) return cmd_topk_sweep(opts, out);
        if (cmd == cachec) return cmd_cache(opts, cache_action, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    err << "error: no command dispatched\n";
    return 2;
}

}  // namespace icl::cli
