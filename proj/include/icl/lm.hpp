#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/cache.hpp"
#include "icl/corpus.hpp"
#include "icl/errors.hpp"

namespace icl::lm {

using corpus::LabelSpace;
using corpus::LabelSpacePtr;

/// Probability floor applied before any log or reciprocal.
constexpr double kProbFloor = 1e-12;

// ---------------------------------------------------------------------------
// Label distribution
// ---------------------------------------------------------------------------

/// Normalized probability vector over a task's label space. Entries sum to 1
/// within 1e-9 and are floored at kProbFloor.
struct LabelDistribution {
    std::vector<double> probs;
    LabelSpacePtr space;

    std::size_t size() const { return probs.size(); }

    /// Floor, normalize, floor again. The second floor keeps every entry at
    /// or above kProbFloor; it perturbs the sum by at most L*kProbFloor.
    static LabelDistribution normalized(std::vector<double> weights, LabelSpacePtr space) {
        if (!space || weights.size() != space->num_labels()) {
            throw ShapeError("distribution length " + std::to_string(weights.size()) +
                             " does not match label space");
        }
        double sum = 0.0;
        for (auto& w : weights) {
            if (!std::isfinite(w)) w = 0.0;
            w = std::max(w, kProbFloor);
            sum += w;
        }
        for (auto& w : weights) {
            w /= sum;
            w = std::max(w, kProbFloor);
        }
        return LabelDistribution{std::move(weights), std::move(space)};
    }

    /// Exponentiates natural-log probabilities (shift by max first) and
    /// normalizes over the label set.
    static LabelDistribution from_logprobs(const std::vector<double>& logprobs,
                                           LabelSpacePtr space) {
        double max_lp = -std::numeric_limits<double>::infinity();
        for (double lp : logprobs) max_lp = std::max(max_lp, lp);
        std::vector<double> w(logprobs.size());
        for (std::size_t i = 0; i < logprobs.size(); ++i) {
            w[i] = std::isfinite(logprobs[i]) ? std::exp(logprobs[i] - max_lp) : 0.0;
        }
        return normalized(std::move(w), std::move(space));
    }

    /// Index of the largest entry; ties resolve to the lowest label id.
    int argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i) {
            if (probs[i] > probs[best]) best = i;
        }
        return static_cast<int>(best);
    }

    bool same_space(const LabelDistribution& other) const {
        return space && other.space && space->task_name == other.space->task_name &&
               space->num_labels() == other.space->num_labels();
    }
};

// ---------------------------------------------------------------------------
// Backend descriptor
// ---------------------------------------------------------------------------

enum class BackendKind { http, cache_replay, mock };

inline std::string to_string(BackendKind k) {
    switch (k) {
        case BackendKind::http: return "http";
        case BackendKind::cache_replay: return "cache-replay";
        case BackendKind::mock: return "mock";
    }
    return "?";
}

inline BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "http") return BackendKind::http;
    if (s == "cache-replay") return BackendKind::cache_replay;
    if (s == "mock") return BackendKind::mock;
    throw ConfigError("unknown backend kind: " + s);
}

/// Decoding is deterministic: temperature 0, one generated token, logprobs
/// restricted to the configured depth. Retry knobs are transport-level and
/// excluded from cache keys.
struct BackendParameters {
    double temperature = 0.0;
    int max_tokens = 1;
    int logprob_depth = 100;
    int retry_attempts = 5;
    int retry_base_ms = 1000;

    json cache_view() const {
        return json{{"temperature", temperature},
                    {"max_tokens", max_tokens},
                    {"logprob_depth", logprob_depth}};
    }
};

struct BackendDescriptor {
    BackendKind kind = BackendKind::mock;
    std::string model_name;
    std::string endpoint;  // http only
    BackendParameters parameters;
    std::filesystem::path cache_dir;  // empty → no response cache

    void validate() const {
        if (model_name.empty()) throw ConfigError("backend model_name must be non-empty");
        if (kind == BackendKind::http && endpoint.empty()) {
            throw ConfigError("http backend requires an endpoint");
        }
        if (kind == BackendKind::cache_replay && cache_dir.empty()) {
            throw ConfigError("cache-replay backend requires a cache directory");
        }
    }
};

struct BackendStats {
    std::uint64_t upstream_calls = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t probe_calls = 0;
};

// ---------------------------------------------------------------------------
// Backend base
// ---------------------------------------------------------------------------

/// Shared machinery for every backend: first-token probing with collision
/// checks, the content-addressed response cache, per-key in-flight
/// deduplication, and call counters. Subclasses implement the two upstream
/// hooks; a cache-replay backend has no upstream at all.
class LmBackend {
public:
    virtual ~LmBackend() = default;

    const BackendDescriptor& descriptor() const { return desc_; }
    const std::string& model_name() const { return desc_.model_name; }

    /// First scoring token per verbalizer. Memoized per label space; stored
    /// as a cache sidecar so offline replay can recompute entry keys.
    std::vector<std::string> probe_first_tokens(const LabelSpace& space) {
        const std::string pkey =
            ResponseCache::probe_key(desc_.model_name, space.verbalizers,
                                     desc_.parameters.cache_view());
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = probe_memo_.find(pkey);
            if (it != probe_memo_.end()) return it->second;
        }
        std::vector<std::string> tokens;
        if (cache_) {
            if (auto cached = cache_->get_probe(pkey)) tokens = *cached;
        }
        if (tokens.empty()) {
            if (offline()) {
                throw CacheError("offline: no cached first-token probe for model '" +
                                 desc_.model_name + "' / task '" + space.task_name + "'");
            }
            tokens = probe_upstream(space);
            {
                std::lock_guard<std::mutex> lock(mu_);
                ++stats_.probe_calls;
            }
            if (cache_) cache_->put_probe(pkey, desc_.model_name, space.verbalizers, tokens);
        }
        check_collisions(space, tokens);
        std::lock_guard<std::mutex> lock(mu_);
        probe_memo_[pkey] = tokens;
        return tokens;
    }

    /// Natural-log label probabilities (pre-normalization) for one prompt.
    /// Cache-backed; concurrent calls for the same key share one upstream
    /// request.
    std::vector<double> label_logprobs(const std::string& prompt, const LabelSpace& space) {
        const auto tokens = probe_first_tokens(space);
        const std::string key =
            cache_key(desc_.model_name, prompt, desc_.parameters.cache_view(), tokens);

        std::shared_future<std::vector<double>> fut;
        bool owner = false;
        {
            std::unique_lock<std::mutex> lock(mu_);
            if (cache_) {
                lock.unlock();
                auto hit = cache_->get(key);
                lock.lock();
                if (hit) {
                    ++stats_.cache_hits;
                    return hit->label_logprobs;
                }
            }
            auto it = inflight_.find(key);
            if (it != inflight_.end()) {
                fut = it->second;
            } else {
                std::promise<std::vector<double>> prom;
                fut = prom.get_future().share();
                inflight_[key] = fut;
                pending_[key] = std::move(prom);
                owner = true;
            }
        }
        if (!owner) return fut.get();

        try {
            if (offline()) {
                throw CacheError("offline: cache miss for prompt under model '" +
                                 desc_.model_name + "' (key " + key + ")");
            }
            auto lps = score_upstream(prompt, tokens, space);
            if (lps.size() != space.num_labels()) {
                throw ShapeError("backend returned " + std::to_string(lps.size()) +
                                 " logprobs for L=" + std::to_string(space.num_labels()));
            }
            if (cache_) {
                cache_->put(CacheEntry{key, prompt, desc_.model_name,
                                       desc_.parameters.cache_view(), tokens, lps, ""});
            }
            std::lock_guard<std::mutex> lock(mu_);
            ++stats_.upstream_calls;
            pending_[key].set_value(lps);
            pending_.erase(key);
            inflight_.erase(key);
            return lps;
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu_);
            pending_[key].set_exception(std::current_exception());
            pending_.erase(key);
            inflight_.erase(key);
            throw;
        }
    }

    BackendStats stats() const {
        std::lock_guard<std::mutex> lock(mu_);
        return stats_;
    }

    ResponseCache* cache() { return cache_ ? &*cache_ : nullptr; }

protected:
    explicit LmBackend(BackendDescriptor desc) : desc_(std::move(desc)) {
        desc_.validate();
        if (!desc_.cache_dir.empty()) cache_.emplace(desc_.cache_dir);
    }

    bool offline() const { return desc_.kind == BackendKind::cache_replay; }

    virtual std::vector<std::string> probe_upstream(const LabelSpace& space) = 0;
    virtual std::vector<double> score_upstream(const std::string& prompt,
                                               const std::vector<std::string>& first_tokens,
                                               const LabelSpace& space) = 0;

private:
    static void check_collisions(const LabelSpace& space, const std::vector<std::string>& tokens) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            for (std::size_t j = i + 1; j < tokens.size(); ++j) {
                if (tokens[i] == tokens[j]) {
                    throw LabelCollisionError("verbalizers '" + space.verbalizers[i] + "' and '" +
                                              space.verbalizers[j] +
                                              "' share first scoring token '" + tokens[i] + "'");
                }
            }
        }
    }

    BackendDescriptor desc_;
    std::optional<ResponseCache> cache_;
    mutable std::mutex mu_;
    BackendStats stats_;
    std::unordered_map<std::string, std::shared_future<std::vector<double>>> inflight_;
    std::unordered_map<std::string, std::promise<std::vector<double>>> pending_;
};

using LmBackendPtr = std::shared_ptr<LmBackend>;

/// Replays a warm cache; any miss is an error instead of an upstream call.
class CacheReplayLm final : public LmBackend {
public:
    explicit CacheReplayLm(BackendDescriptor desc) : LmBackend(std::move(desc)) {}

protected:
    std::vector<std::string> probe_upstream(const LabelSpace&) override {
        throw CacheError("cache-replay backend has no upstream");
    }
    std::vector<double> score_upstream(const std::string&, const std::vector<std::string>&,
                                       const LabelSpace&) override {
        throw CacheError("cache-replay backend has no upstream");
    }
};

// ---------------------------------------------------------------------------
// Module operations
// ---------------------------------------------------------------------------

inline std::vector<std::string> probe_first_tokens(const LabelSpace& space, LmBackend& backend) {
    return backend.probe_first_tokens(space);
}

/// Scores the label first-tokens at the answer position and renormalizes
/// over the label set.
inline LabelDistribution score_labels(const std::string& prompt, const LabelSpacePtr& space,
                                      LmBackend& backend) {
    if (prompt.empty()) throw Error("score_labels: empty prompt");
    return LabelDistribution::from_logprobs(backend.label_logprobs(prompt, *space), space);
}

/// Sequential-equivalent concurrent scoring: results are in input order, at
/// most `concurrency` requests are in flight, and the first hard error is
/// rethrown after outstanding work is cancelled.
inline std::vector<LabelDistribution> score_batch(const std::vector<std::string>& prompts,
                                                  const LabelSpacePtr& space, LmBackend& backend,
                                                  std::size_t concurrency) {
    if (concurrency < 1) throw ConfigError("score_batch: concurrency must be >= 1");
    if (prompts.empty()) return {};

    backend.probe_first_tokens(*space);  // fail fast before spawning workers

    std::vector<std::optional<LabelDistribution>> slots(prompts.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto worker = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= prompts.size()) return;
            try {
                slots[i] = score_labels(prompts[i], space, backend);
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
                abort.store(true);
                return;
            }
        }
    };

    const std::size_t n_workers = std::min(concurrency, prompts.size());
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(n_workers);
        for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<LabelDistribution> out;
    out.reserve(prompts.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace icl::lm
