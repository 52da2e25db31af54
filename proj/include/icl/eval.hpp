#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/calibrate.hpp"
#include "icl/corpus.hpp"
#include "icl/lm.hpp"
#include "icl/select.hpp"

namespace icl::eval {

using calib::CalibrationVector;
using calib::ContentFreeSet;
using corpus::Example;
using corpus::LabelSpacePtr;
using corpus::PromptTemplate;
using corpus::PromptTemplatePtr;
using lm::LabelDistribution;
using json = nlohmann::json;

/// A demonstration: an example plus its annotated label.
using Demo = std::pair<Example, int>;

/// Test-set subsampling derives its seed from the run seed with this fixed
/// XOR constant, keeping it decorrelated from pool subsampling.
constexpr std::uint64_t kTestSeedXor = 0x9E3779B97F4A7C15ULL;

/// Same idea for the label-randomization draw in the ablation experiment.
constexpr std::uint64_t kAblationSeedXor = 0xBB67AE8584CAA73BULL;

// ---------------------------------------------------------------------------
// Accuracy evaluation
// ---------------------------------------------------------------------------

struct PredictionRecord {
    std::uint64_t seed = 0;
    std::string example_id;
    int gold = 0;
    int predicted = 0;
    std::vector<double> raw_probs;
    std::optional<std::vector<double>> cal_probs;
};

struct EvalOutcome {
    double accuracy = 0.0;
    std::vector<PredictionRecord> log;
};

/// Few-shot accuracy over a test set: each query is rendered behind the demo
/// prefix, scored, optionally post-calibrated, and predicted by argmax (ties
/// to the lowest label id).
inline EvalOutcome evaluate(const std::vector<Demo>& demos, const std::vector<Example>& test_set,
                            const PromptTemplate& tmpl, const LabelSpacePtr& space,
                            lm::LmBackend& backend,
                            const std::optional<CalibrationVector>& post_cal = {},
                            std::size_t concurrency = 8) {
    std::vector<std::string> prompts;
    prompts.reserve(test_set.size());
    for (const auto& q : test_set) {
        if (!q.gold_label) {
            throw DataError("test example '" + q.id + "' lacks a gold label");
        }
        prompts.push_back(corpus::render_few_shot(tmpl, *space, demos, q));
    }
    auto dists = lm::score_batch(prompts, space, backend, concurrency);

    EvalOutcome out;
    out.log.reserve(test_set.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        PredictionRecord rec;
        rec.example_id = test_set[i].id;
        rec.gold = *test_set[i].gold_label;
        rec.raw_probs = dists[i].probs;
        if (post_cal) {
            auto q = calib::calibrate(dists[i], *post_cal);
            rec.predicted = q.argmax();
            rec.cal_probs = q.probs;
        } else {
            rec.predicted = dists[i].argmax();
        }
        if (rec.predicted == rec.gold) ++correct;
        out.log.push_back(std::move(rec));
    }
    out.accuracy = test_set.empty() ? 0.0 : static_cast<double>(correct) / test_set.size();
    return out;
}

/// Contextual calibration: the content-free strings are rendered as the test
/// input behind the few-shot prefix, so the bias is measured in-context.
/// With no demos this reduces to the sampling-time calibrator.
inline CalibrationVector post_calibrate_context(const std::vector<Demo>& demos,
                                                const PromptTemplate& tmpl,
                                                const ContentFreeSet& cf,
                                                const LabelSpacePtr& space,
                                                lm::LmBackend& backend) {
    cf.validate();
    std::vector<double> mean(space->num_labels(), 0.0);
    for (const auto& s : cf.strings) {
        auto prompt =
            corpus::render_few_shot(tmpl, *space, demos, corpus::content_free_example(tmpl, s));
        auto dist = lm::score_labels(prompt, space, backend);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += dist.probs[i];
    }
    for (auto& m : mean) m /= static_cast<double>(cf.strings.size());
    return calib::make_calibrator(LabelDistribution::normalized(std::move(mean), space));
}

// ---------------------------------------------------------------------------
// Order probing
// ---------------------------------------------------------------------------

struct OrderProbeResult {
    std::vector<std::size_t> best_permutation;  // indices into the input demos
    std::vector<Demo> best_demos;
    double best_entropy = 0.0;
    std::vector<std::pair<std::vector<std::size_t>, double>> evaluated;  // lex order
};

namespace detail {

/// All permutations of 0..k-1 if k! <= cap, otherwise a seeded sample of cap
/// distinct permutations. Either way the result is in lexicographic order.
inline std::vector<std::vector<std::size_t>> permutations_to_probe(std::size_t k, std::size_t cap,
                                                                   std::uint64_t seed) {
    std::uint64_t total = 1;
    bool overflow = false;
    for (std::size_t i = 2; i <= k; ++i) {
        if (total > (UINT64_MAX / i)) {
            overflow = true;
            break;
        }
        total *= i;
    }
    std::vector<std::vector<std::size_t>> perms;
    std::vector<std::size_t> p(k);
    std::iota(p.begin(), p.end(), std::size_t{0});
    if (!overflow && total <= cap) {
        do {
            perms.push_back(p);
        } while (std::next_permutation(p.begin(), p.end()));
        return perms;
    }
    Rng rng(seed);
    std::set<std::vector<std::size_t>> unique;
    while (unique.size() < cap) {
        auto q = p;
        deterministic_shuffle(q, rng);
        unique.insert(std::move(q));
    }
    perms.assign(unique.begin(), unique.end());
    return perms;
}

}  // namespace detail

/// Scores every candidate ordering of the demos on a probing set and keeps
/// the one whose aggregate predicted-label histogram has maximum entropy
/// ("global entropy"). Ties resolve to the lexicographically smallest
/// permutation.
inline OrderProbeResult probe_order(const std::vector<Demo>& demos,
                                    const std::vector<Example>& probe_set,
                                    const PromptTemplate& tmpl, const LabelSpacePtr& space,
                                    lm::LmBackend& backend, std::size_t max_permutations = 24,
                                    std::uint64_t sample_seed = 0, std::size_t concurrency = 8) {
    if (demos.size() < 2) throw ConfigError("probe_order needs at least 2 demos");
    if (probe_set.empty()) throw ConfigError("probe_order needs a non-empty probing set");
    if (max_permutations < 1) throw ConfigError("max_permutations must be >= 1");

    const auto perms = detail::permutations_to_probe(demos.size(), max_permutations, sample_seed);

    OrderProbeResult result;
    result.best_entropy = -1.0;
    for (const auto& perm : perms) {
        std::vector<Demo> ordered;
        ordered.reserve(demos.size());
        for (auto idx : perm) ordered.push_back(demos[idx]);

        std::vector<std::string> prompts;
        prompts.reserve(probe_set.size());
        for (const auto& q : probe_set) {
            prompts.push_back(corpus::render_few_shot(tmpl, *space, ordered, q));
        }
        auto dists = lm::score_batch(prompts, space, backend, concurrency);

        std::vector<double> counts(space->num_labels(), 0.0);
        for (const auto& d : dists) counts[static_cast<std::size_t>(d.argmax())] += 1.0;
        const double h =
            select::entropy(LabelDistribution::normalized(std::move(counts), space));

        result.evaluated.emplace_back(perm, h);
        if (h > result.best_entropy) {
            result.best_entropy = h;
            result.best_permutation = perm;
            result.best_demos = std::move(ordered);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Pattern enumeration (class-balance sweeps)
// ---------------------------------------------------------------------------

struct PatternSpec {
    std::vector<int> sequence;  // class label per demo slot
    bool balanced = false;
};

/// All classes^k demo-label sequences, each flagged balanced when every
/// class appears equally often.
inline std::vector<PatternSpec> enumerate_patterns(std::size_t k, std::size_t classes) {
    if (classes < 2) throw ConfigError("enumerate_patterns needs at least 2 classes");
    if (k < 1) throw ConfigError("enumerate_patterns needs k >= 1");
    std::vector<PatternSpec> out;
    std::vector<int> seq(k, 0);
    while (true) {
        PatternSpec spec;
        spec.sequence = seq;
        std::vector<std::size_t> counts(classes, 0);
        for (int c : seq) counts[static_cast<std::size_t>(c)] += 1;
        spec.balanced = k % classes == 0 &&
                        std::all_of(counts.begin(), counts.end(),
                                    [&](std::size_t n) { return n == k / classes; });
        out.push_back(std::move(spec));
        // odometer increment, most significant digit first
        std::size_t pos = k;
        while (pos > 0) {
            --pos;
            if (seq[pos] + 1 < static_cast<int>(classes)) {
                ++seq[pos];
                std::fill(seq.begin() + static_cast<std::ptrdiff_t>(pos) + 1, seq.end(), 0);
                break;
            }
            if (pos == 0) return out;
        }
    }
}

/// Fills each pattern slot with the best remaining candidate of that class
/// under the method's criterion. Gold labels are assumed available here (and
/// only here); the label written into the demo is the slot's class.
inline std::vector<Demo> select_for_pattern(const std::vector<select::ScoredCandidate>& scored,
                                            const PatternSpec& pattern, select::Method method,
                                            const std::map<std::string, int>& gold_labels,
                                            std::optional<std::uint64_t> seed = {}) {
    std::vector<bool> used(scored.size(), false);
    std::optional<Rng> rng;
    if (method == select::Method::random) {
        if (!seed) throw ConfigError("random selection requires a seed");
        rng.emplace(*seed);
    }
    const bool calibrated = select::uses_calibration(method);
    const bool want_min = method == select::Method::max_ig || method == select::Method::cbs_max_ig;

    std::vector<Demo> demos;
    demos.reserve(pattern.sequence.size());
    for (int cls : pattern.sequence) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < scored.size(); ++i) {
            if (used[i]) continue;
            auto it = gold_labels.find(scored[i].example.id);
            if (it == gold_labels.end()) {
                throw DataError("no gold label for pool candidate '" + scored[i].example.id + "'");
            }
            if (it->second == cls) pool.push_back(i);
        }
        if (pool.empty()) {
            throw PoolCoverageError("pattern needs another class-" + std::to_string(cls) +
                                    " candidate but the pool is exhausted");
        }
        std::size_t pick;
        if (method == select::Method::random) {
            pick = pool[static_cast<std::size_t>(rng->bounded(pool.size()))];
        } else {
            pick = pool[0];
            double best = -select::information_gain_rank_key(scored[pool[0]], calibrated);
            for (std::size_t j = 1; j < pool.size(); ++j) {
                const double h = -select::information_gain_rank_key(scored[pool[j]], calibrated);
                const bool better = want_min ? h < best : h > best;
                if (better) {
                    best = h;
                    pick = pool[j];
                }
            }
        }
        used[pick] = true;
        demos.emplace_back(scored[pick].example, cls);
    }
    return demos;
}

// ---------------------------------------------------------------------------
// Label ablation
// ---------------------------------------------------------------------------

/// Replaces each demo's label with an independent uniform draw over the
/// whole label set (the gold label included).
inline std::vector<Demo> randomize_labels(const std::vector<Demo>& demos,
                                          const corpus::LabelSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Demo> out = demos;
    for (auto& [example, label] : out) {
        label = static_cast<int>(rng.bounded(space.num_labels()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Top-K consistency sweep
// ---------------------------------------------------------------------------

struct TopKSweepResult {
    std::vector<double> accuracy_by_rank;  // rank 1..k_max, one-shot each
    std::vector<double> random_accuracies;
    double random_mean = 0.0;
    double random_std = 0.0;
};

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population standard deviation: the seeds enumerate the exact runs
/// reported, so there is no sampling correction.
inline double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    const double m = mean_of(xs);
    double var = 0.0;
    for (double x : xs) var += (x - m) * (x - m);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

/// One-shot accuracy of each of the top-k_max candidates in IG order, plus a
/// seeded random-choice reference band.
inline TopKSweepResult top_k_sweep(const std::vector<select::ScoredCandidate>& scored,
                                   bool calibrated, std::size_t k_max,
                                   const std::vector<Example>& test_set,
                                   const PromptTemplate& tmpl, const LabelSpacePtr& space,
                                   lm::LmBackend& backend,
                                   const std::vector<std::uint64_t>& random_seeds,
                                   std::size_t concurrency = 8) {
    if (k_max > scored.size()) {
        throw SizeError("top_k_sweep: k_max=" + std::to_string(k_max) + " exceeds pool size " +
                        std::to_string(scored.size()));
    }
    auto demo_of = [&](const select::ScoredCandidate& c) -> Demo {
        if (!c.example.gold_label) {
            throw DataError("candidate '" + c.example.id + "' lacks a gold label for one-shot use");
        }
        return {c.example, *c.example.gold_label};
    };

    const auto ranked = select_top_k(
        scored, k_max, calibrated ? select::Method::cbs_max_ig : select::Method::max_ig);

    TopKSweepResult result;
    for (std::size_t r = 0; r < k_max; ++r) {
        auto outcome = evaluate({demo_of(ranked.selected[r])}, test_set, tmpl, space, backend, {},
                                concurrency);
        result.accuracy_by_rank.push_back(outcome.accuracy);
    }
    for (auto seed : random_seeds) {
        auto pick = select_top_k(scored, 1, select::Method::random, seed);
        auto outcome =
            evaluate({demo_of(pick.selected[0])}, test_set, tmpl, space, backend, {}, concurrency);
        result.random_accuracies.push_back(outcome.accuracy);
    }
    result.random_mean = mean_of(result.random_accuracies);
    result.random_std = population_std(result.random_accuracies);
    return result;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

struct ExperimentSetup {
    PromptTemplatePtr tmpl;
    LabelSpacePtr space;
    std::vector<Example> train;
    std::vector<Example> test;
    lm::LmBackendPtr backend;
    select::Method method = select::Method::cbs_max_ig;
    std::size_t pool_size = 100;
    std::size_t k_shots = 1;
    std::size_t test_subsample = 300;
    std::vector<std::uint64_t> seeds;
    bool post_calibrate = false;
    ContentFreeSet cf;
    std::size_t concurrency = 8;
    std::string train_name;
    std::string test_name;

    void validate() const {
        if (!tmpl || !space || !backend) throw ConfigError("experiment setup is incomplete");
        if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
        if (test_subsample < 1) throw ConfigError("test_subsample must be >= 1");
        if (k_shots > pool_size) throw ConfigError("k_shots exceeds pool size");
        if (pool_size > train.size()) {
            throw SizeError("pool size " + std::to_string(pool_size) + " exceeds training set (" +
                            std::to_string(train.size()) + ")");
        }
    }
};

struct SeedRun {
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    select::SelectionReport selection;
};

struct ExperimentReport {
    std::vector<double> per_seed_accuracy;
    double mean = 0.0;
    double std_dev = 0.0;  // population
    std::vector<SeedRun> runs;
    std::vector<PredictionRecord> predictions;  // seeds × test_subsample records
    json config_echo;
};

/// The paper's protocol, per seed: subsample the candidate pool, estimate the
/// content-free calibrator for CBS methods, score, select K demos, subsample
/// the test set, evaluate. All randomness derives from the seed, so a warm
/// cache replays every number bitwise.
inline ExperimentReport run_experiment(const ExperimentSetup& setup) {
    setup.validate();
    ExperimentReport report;

    for (const auto seed : setup.seeds) {
        try {
            auto pool =
                corpus::subsample_pool(setup.train, setup.pool_size, seed, setup.train_name);

            std::optional<CalibrationVector> cal;
            if (select::uses_calibration(setup.method)) {
                cal = calib::make_calibrator(
                    calib::estimate_pcf(*setup.tmpl, setup.cf, setup.space, *setup.backend).pcf);
            }
            auto scored = select::score_pool(pool, *setup.tmpl, setup.space, *setup.backend, cal,
                                             setup.concurrency);
            auto selection =
                select::select_top_k(scored, setup.k_shots, setup.method, seed, cal);

            std::vector<Demo> demos;
            demos.reserve(selection.selected.size());
            for (const auto& c : selection.selected) {
                if (!c.example.gold_label) {
                    throw DataError("selected candidate '" + c.example.id +
                                    "' has no gold label to annotate with");
                }
                demos.emplace_back(c.example, *c.example.gold_label);
            }

            const std::size_t n_test = std::min(setup.test_subsample, setup.test.size());
            auto test_pool =
                corpus::subsample_pool(setup.test, n_test, seed ^ kTestSeedXor, setup.test_name);

            std::optional<CalibrationVector> post_cal;
            if (setup.post_calibrate) {
                post_cal =
                    post_calibrate_context(demos, *setup.tmpl, setup.cf, setup.space, *setup.backend);
            }
            auto outcome = evaluate(demos, test_pool.examples, *setup.tmpl, setup.space,
                                    *setup.backend, post_cal, setup.concurrency);

            for (auto& rec : outcome.log) rec.seed = seed;
            report.predictions.insert(report.predictions.end(), outcome.log.begin(),
                                      outcome.log.end());
            report.per_seed_accuracy.push_back(outcome.accuracy);
            report.runs.push_back(SeedRun{seed, outcome.accuracy, std::move(selection)});
        } catch (const std::exception& e) {
            throw Error("seed " + std::to_string(seed) + ": " + e.what());
        }
    }

    report.mean = mean_of(report.per_seed_accuracy);
    report.std_dev = population_std(report.per_seed_accuracy);
    report.config_echo = json{{"method", select::to_string(setup.method)},
                              {"model", setup.backend->model_name()},
                              {"task", setup.tmpl->task_name},
                              {"k_shots", setup.k_shots},
                              {"pool_size", setup.pool_size},
                              {"test_subsample", setup.test_subsample},
                              {"seeds", setup.seeds},
                              {"post_calibrate", setup.post_calibrate},
                              {"content_free", setup.cf.strings},
                              {"std_kind", "population"}};
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json prediction_to_json(const PredictionRecord& rec) {
    json j{{"seed", rec.seed},
           {"id", rec.example_id},
           {"gold", rec.gold},
           {"predicted", rec.predicted},
           {"raw_probs", rec.raw_probs}};
    if (rec.cal_probs) j["cal_probs"] = *rec.cal_probs;
    return j;
}

inline std::string predictions_to_jsonl(const std::vector<PredictionRecord>& log) {
    std::string out;
    for (const auto& rec : log) out += prediction_to_json(rec).dump() + '\n';
    return out;
}

inline json report_to_json(const ExperimentReport& report) {
    json runs = json::array();
    for (const auto& r : report.runs) {
        runs.push_back(json{{"seed", r.seed},
                            {"accuracy", r.accuracy},
                            {"selection", select::selection_report_to_json(r.selection)}});
    }
    return json{{"per_seed_accuracy", report.per_seed_accuracy},
                {"mean", report.mean},
                {"std", report.std_dev},
                {"runs", std::move(runs)},
                {"config", report.config_echo},
                {"n_predictions", report.predictions.size()}};
}

}  // namespace icl::eval
