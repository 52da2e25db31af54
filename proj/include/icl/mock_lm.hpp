#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "icl/hash.hpp"
#include "icl/lm.hpp"
#include "icl/rng.hpp"

namespace icl::lm {

/// Deterministic test backend. For a prompt P it returns σ(bias ∘ q_true(P)),
/// where q_true is the planted distribution for P's hash, or a seed-derived
/// pseudorandom simplex point when nothing is planted. Content-free prompts
/// return σ(bias) itself.
///
/// Content-free detection: a prompt matches if it contains any registered
/// non-empty content-free string, or equals a registered rendered prompt.
/// The exact-prompt registry exists because the empty string — one of the
/// standard content-free inputs — is a substring of everything; callers
/// register the rendered empty-input prompt instead.
struct MockLmSpec {
    std::uint64_t seed = 0;
    std::vector<double> bias;  // positive entries, length L of the served space
    std::unordered_map<std::string, std::vector<double>> planted;  // sha256(prompt) → q_true
    std::vector<std::string> content_free_markers{"N/A", "[MASK]"};
    std::unordered_set<std::string> content_free_prompts;

    void plant_prompt(const std::string& prompt, std::vector<double> q_true) {
        planted[sha256_hex(prompt)] = std::move(q_true);
    }

    void register_content_free_prompt(const std::string& prompt) {
        content_free_prompts.insert(prompt);
    }
};

class MockLm final : public LmBackend {
public:
    MockLm(BackendDescriptor desc, MockLmSpec spec)
        : LmBackend(std::move(desc)), spec_(std::move(spec)) {
        for (double b : spec_.bias) {
            if (!(b > 0.0)) throw ConfigError("mock bias entries must be > 0");
        }
    }

protected:
    /// First UTF-8 codepoint of each verbalizer.
    std::vector<std::string> probe_upstream(const LabelSpace& space) override {
        std::vector<std::string> tokens;
        tokens.reserve(space.num_labels());
        for (const auto& v : space.verbalizers) tokens.push_back(first_codepoint(v));
        return tokens;
    }

    std::vector<double> score_upstream(const std::string& prompt, const std::vector<std::string>&,
                                       const LabelSpace& space) override {
        const std::size_t l = space.num_labels();
        if (spec_.bias.size() != l) {
            throw ShapeError("mock bias has length " + std::to_string(spec_.bias.size()) +
                             " but label space has L=" + std::to_string(l));
        }
        std::vector<double> weights;
        if (is_content_free(prompt)) {
            weights = spec_.bias;
        } else {
            const std::vector<double> q = q_true(prompt, l);
            weights.resize(l);
            for (std::size_t i = 0; i < l; ++i) weights[i] = spec_.bias[i] * q[i];
        }
        std::vector<double> lps(l);
        for (std::size_t i = 0; i < l; ++i) lps[i] = std::log(std::max(weights[i], kProbFloor));
        return lps;
    }

private:
    bool is_content_free(const std::string& prompt) const {
        if (spec_.content_free_prompts.count(prompt)) return true;
        for (const auto& marker : spec_.content_free_markers) {
            if (!marker.empty() && prompt.find(marker) != std::string::npos) return true;
        }
        return false;
    }

    std::vector<double> q_true(const std::string& prompt, std::size_t l) const {
        auto it = spec_.planted.find(sha256_hex(prompt));
        if (it != spec_.planted.end()) {
            if (it->second.size() != l) {
                throw ShapeError("planted distribution has wrong length for prompt");
            }
            return it->second;
        }
        Rng rng(spec_.seed ^ fnv1a64(prompt));
        return random_simplex(rng, l);
    }

    static std::string first_codepoint(const std::string& s) {
        if (s.empty()) throw LabelError("cannot probe an empty verbalizer");
        const auto lead = static_cast<unsigned char>(s[0]);
        std::size_t len = 1;
        if (lead >= 0xF0) len = 4;
        else if (lead >= 0xE0) len = 3;
        else if (lead >= 0xC0) len = 2;
        return s.substr(0, std::min(len, s.size()));
    }

    MockLmSpec spec_;
};

/// Builds a mock backend, optionally cache-backed.
inline LmBackendPtr mock_lm(MockLmSpec spec, std::string model_name = "mock",
                            std::filesystem::path cache_dir = {}) {
    BackendDescriptor desc;
    desc.kind = BackendKind::mock;
    desc.model_name = std::move(model_name);
    desc.cache_dir = std::move(cache_dir);
    return std::make_shared<MockLm>(std::move(desc), std::move(spec));
}

}  // namespace icl::lm
