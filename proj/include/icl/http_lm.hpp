#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/lm.hpp"

namespace icl::lm {

/// Client for an OpenAI-compatible completions endpoint. One request per
/// prompt: max_tokens=1, temperature=0, logprobs=depth, echo=false; the
/// label probabilities are read from the first generated position's
/// top_logprobs. The API key comes from ICL_API_KEY.
class HttpLm final : public LmBackend {
public:
    explicit HttpLm(BackendDescriptor desc) : LmBackend(std::move(desc)) {
        split_endpoint(descriptor().endpoint, base_, path_);
        if (path_.empty()) path_ = "/v1/completions";
    }

protected:
    /// Tokenizes " " + verbalizer via an echo request (max_tokens=0) and
    /// takes the leading token. The leading space matches the answer
    /// position: every shipped query pattern ends flush at the colon, so the
    /// generated verbalizer text starts with a space.
    std::vector<std::string> probe_upstream(const LabelSpace& space) override {
        std::vector<std::string> tokens;
        tokens.reserve(space.num_labels());
        for (const auto& verb : space.verbalizers) {
            json req{{"model", model_name()}, {"prompt", " " + verb}, {"max_tokens", 0},
                     {"temperature", 0.0},    {"logprobs", 0},        {"echo", true}};
            json resp = post_with_retries(req);
            try {
                const auto& toks = resp.at("choices").at(0).at("logprobs").at("tokens");
                if (toks.empty()) throw TransportError("echo tokenization returned no tokens");
                tokens.push_back(toks.at(0).get<std::string>());
            } catch (const json::exception& e) {
                throw TransportError("malformed probe response for verbalizer '" + verb +
                                     "': " + e.what());
            }
        }
        return tokens;
    }

    std::vector<double> score_upstream(const std::string& prompt,
                                       const std::vector<std::string>& first_tokens,
                                       const LabelSpace& space) override {
        const auto& params = descriptor().parameters;
        json req{{"model", model_name()},
                 {"prompt", prompt},
                 {"max_tokens", params.max_tokens},
                 {"temperature", params.temperature},
                 {"logprobs", params.logprob_depth},
                 {"echo", false}};
        json resp = post_with_retries(req);

        json top;
        try {
            top = resp.at("choices").at(0).at("logprobs").at("top_logprobs").at(0);
        } catch (const json::exception& e) {
            throw TransportError(std::string("malformed completions response: ") + e.what());
        }
        std::vector<double> lps;
        lps.reserve(first_tokens.size());
        for (std::size_t i = 0; i < first_tokens.size(); ++i) {
            auto it = top.find(first_tokens[i]);
            if (it == top.end()) {
                throw DepthError("token '" + first_tokens[i] + "' for label '" +
                                 space.verbalizers[i] + "' absent from top_logprobs; raise "
                                 "logprob depth (current " +
                                 std::to_string(params.logprob_depth) + ")");
            }
            lps.push_back(it->get<double>());
        }
        return lps;
    }

private:
    json post_with_retries(const json& request) const {
        const auto& params = descriptor().parameters;
        std::string last_error;
        std::optional<long> retry_after_ms;  // server hint, consumed by the next attempt
        for (int attempt = 0; attempt < params.retry_attempts; ++attempt) {
            if (attempt > 0) {
                const long delay = retry_after_ms ? *retry_after_ms
                                                  : params.retry_base_ms << (attempt - 1);
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                retry_after_ms.reset();
            }
            httplib::Client client(base_);
            client.set_connection_timeout(30);
            client.set_read_timeout(120);
            httplib::Headers headers;
            if (const char* key = std::getenv("ICL_API_KEY")) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
            auto res = client.Post(path_, headers, request.dump(), "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 200 && res->status < 300) {
                try {
                    return json::parse(res->body);
                } catch (const json::exception& e) {
                    throw TransportError(std::string("endpoint returned unparseable JSON: ") +
                                         e.what());
                }
            }
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
            if (res->status == 429 || res->status >= 500) {
                if (res->has_header("Retry-After")) {
                    retry_after_ms = 1000 * std::strtol(
                        res->get_header_value("Retry-After").c_str(), nullptr, 10);
                }
                continue;  // retryable
            }
            break;  // 4xx other than 429: not retryable
        }
        throw TransportError("completions request to " + base_ + path_ + " failed after " +
                             std::to_string(params.retry_attempts) + " attempts: " + last_error);
    }

    static void split_endpoint(const std::string& url, std::string& base, std::string& path) {
        auto scheme_end = url.find("://");
        std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
        auto slash = url.find('/', host_start);
        if (slash == std::string::npos) {
            base = url;
            path.clear();
        } else {
            base = url.substr(0, slash);
            path = url.substr(slash);
        }
    }

    std::string base_;
    std::string path_;
};

/// Builds a backend for an http or cache-replay descriptor. Mock backends
/// carry extra state; construct those via mock_lm().
inline LmBackendPtr make_backend(BackendDescriptor desc) {
    desc.validate();
    switch (desc.kind) {
        case BackendKind::http: return std::make_shared<HttpLm>(std::move(desc));
        case BackendKind::cache_replay: return std::make_shared<CacheReplayLm>(std::move(desc));
        case BackendKind::mock:
            throw ConfigError("mock backends need a MockLmSpec; use mock_lm()");
    }
    throw ConfigError("unreachable backend kind");
}

}  // namespace icl::lm
