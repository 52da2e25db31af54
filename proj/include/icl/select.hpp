#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/calibrate.hpp"
#include "icl/corpus.hpp"
#include "icl/hash.hpp"
#include "icl/lm.hpp"

namespace icl::select {

using calib::CalibrationVector;
using corpus::CandidatePool;
using corpus::Example;
using corpus::LabelSpacePtr;
using corpus::PromptTemplate;
using lm::LabelDistribution;
using json = nlohmann::json;

/// Shannon entropy in nats: −Σ p_i ln(max(p_i, floor)).
inline double entropy(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs) h -= p * std::log(std::max(p, lm::kProbFloor));
    return h;
}

inline double entropy(const LabelDistribution& d) { return entropy(d.probs); }

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

enum class Method { random, max_entropy, cbs_max_entropy, max_ig, cbs_max_ig };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::random: return "random";
        case Method::max_entropy: return "max_entropy";
        case Method::cbs_max_entropy: return "cbs_max_entropy";
        case Method::max_ig: return "max_ig";
        case Method::cbs_max_ig: return "cbs_max_ig";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "random") return Method::random;
    if (s == "max_entropy") return Method::max_entropy;
    if (s == "cbs_max_entropy") return Method::cbs_max_entropy;
    if (s == "max_ig") return Method::max_ig;
    if (s == "cbs_max_ig") return Method::cbs_max_ig;
    throw ConfigError("unknown selection method: " + s);
}

inline bool uses_calibration(Method m) {
    return m == Method::cbs_max_entropy || m == Method::cbs_max_ig;
}

// ---------------------------------------------------------------------------
// Scored candidates
// ---------------------------------------------------------------------------

struct ScoredCandidate {
    Example example;
    LabelDistribution raw_dist;
    std::optional<LabelDistribution> cal_dist;
    double entropy_raw = 0.0;
    std::optional<double> entropy_cal;
    std::size_t pool_index = 0;
};

/// Negated conditional entropy. The prior entropy H(Y) is constant per task,
/// so ranking by this key is ranking by information gain without ever
/// estimating H(Y).
inline double information_gain_rank_key(const ScoredCandidate& c, bool calibrated) {
    if (calibrated) {
        if (!c.entropy_cal) {
            throw StateError("candidate '" + c.example.id + "' has no calibrated entropy");
        }
        return -*c.entropy_cal;
    }
    return -c.entropy_raw;
}

/// Zero-shot scores every pool candidate in pool order. With a calibrator,
/// also attaches the calibrated distribution and its entropy.
inline std::vector<ScoredCandidate> score_pool(const CandidatePool& pool,
                                               const PromptTemplate& tmpl,
                                               const LabelSpacePtr& space, lm::LmBackend& backend,
                                               const std::optional<CalibrationVector>& cal,
                                               std::size_t concurrency = 8) {
    if (pool.examples.empty()) throw SizeError("score_pool: empty candidate pool");
    backend.probe_first_tokens(*space);

    std::vector<std::string> prompts;
    prompts.reserve(pool.examples.size());
    for (const auto& e : pool.examples) prompts.push_back(corpus::render_zero_shot(tmpl, e));

    std::vector<std::optional<LabelDistribution>> dists(prompts.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto worker = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= prompts.size()) return;
            try {
                dists[i] = lm::score_labels(prompts[i], space, backend);
            } catch (const std::exception& e) {
                {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) {
                        first_error = std::make_exception_ptr(Error(
                            "scoring candidate '" + pool.examples[i].id + "': " + e.what()));
                    }
                }
                abort.store(true);
                return;
            }
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(concurrency, prompts.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<ScoredCandidate> out;
    out.reserve(pool.examples.size());
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
        ScoredCandidate c;
        c.example = pool.examples[i];
        c.raw_dist = std::move(*dists[i]);
        c.entropy_raw = entropy(c.raw_dist);
        c.pool_index = i;
        if (cal) {
            c.cal_dist = calib::calibrate(c.raw_dist, *cal);
            c.entropy_cal = entropy(*c.cal_dist);
        }
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Top-K selection
// ---------------------------------------------------------------------------

struct SelectionReport {
    Method method = Method::max_ig;
    std::size_t k = 0;
    std::vector<ScoredCandidate> selected;  // in rank (or draw) order
    std::string pool_fingerprint;
    std::optional<CalibrationVector> calibration;
    std::optional<std::uint64_t> seed;
};

inline std::string pool_fingerprint(const std::vector<ScoredCandidate>& scored) {
    std::string buf;
    for (const auto& c : scored) {
        buf += std::to_string(c.example.id.size());
        buf += ':';
        buf += c.example.id;
    }
    return sha256_hex(buf);
}

/// Ranks the scored pool under `method` and takes the top k. Entropy ties
/// break toward the lower pool index; `random` requires a seed.
inline SelectionReport select_top_k(const std::vector<ScoredCandidate>& scored, std::size_t k,
                                    Method method, std::optional<std::uint64_t> seed = {},
                                    std::optional<CalibrationVector> calibration = {}) {
    if (k > scored.size()) {
        throw SizeError("select_top_k: k=" + std::to_string(k) + " exceeds pool size " +
                        std::to_string(scored.size()));
    }
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    if (method == Method::random) {
        if (!seed) throw ConfigError("random selection requires a seed");
        Rng rng(*seed);
        deterministic_shuffle(order, rng);
    } else {
        const bool calibrated = uses_calibration(method);
        const bool want_min =
            method == Method::max_ig || method == Method::cbs_max_ig;  // min H = max IG
        std::vector<double> h(scored.size());
        for (std::size_t i = 0; i < scored.size(); ++i) {
            h[i] = -information_gain_rank_key(scored[i], calibrated);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (h[a] != h[b]) return want_min ? h[a] < h[b] : h[a] > h[b];
            return scored[a].pool_index < scored[b].pool_index;
        });
    }

    SelectionReport report;
    report.method = method;
    report.k = k;
    report.pool_fingerprint = pool_fingerprint(scored);
    report.calibration = std::move(calibration);
    report.seed = seed;
    report.selected.reserve(k);
    for (std::size_t i = 0; i < k; ++i) report.selected.push_back(scored[order[i]]);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json scored_candidate_to_json(const ScoredCandidate& c) {
    json j{{"id", c.example.id},
           {"pool_index", c.pool_index},
           {"raw_probs", c.raw_dist.probs},
           {"entropy_raw", c.entropy_raw},
           {"rank_key_raw", -c.entropy_raw}};
    if (c.example.gold_label) j["gold_label"] = *c.example.gold_label;
    if (c.cal_dist) {
        j["cal_probs"] = c.cal_dist->probs;
        j["entropy_cal"] = *c.entropy_cal;
        j["rank_key_cal"] = -*c.entropy_cal;
    }
    return j;
}

/// Line-delimited scored-pool records, one candidate per line in pool order.
inline std::string scored_pool_to_jsonl(const std::vector<ScoredCandidate>& scored) {
    std::string out;
    for (const auto& c : scored) out += scored_candidate_to_json(c).dump() + '\n';
    return out;
}

inline json selection_report_to_json(const SelectionReport& report) {
    json selected = json::array();
    for (const auto& c : report.selected) {
        json j = scored_candidate_to_json(c);
        j["fields"] = c.example.input_fields;
        selected.push_back(std::move(j));
    }
    json j{{"method", to_string(report.method)},
           {"k", report.k},
           {"pool_fingerprint", report.pool_fingerprint},
           {"selected", std::move(selected)}};
    if (report.seed) j["seed"] = *report.seed;
    if (report.calibration) {
        j["calibration"] = json{{"w_diag", report.calibration->w_diag},
                                {"b", report.calibration->b},
                                {"pcf", report.calibration->source_pcf.probs}};
    }
    return j;
}

}  // namespace icl::select
