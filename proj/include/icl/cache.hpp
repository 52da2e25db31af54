#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/errors.hpp"
#include "icl/hash.hpp"

namespace icl::lm {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// One cached scoring response. label_logprobs are natural-log,
/// pre-normalization values, one per label first-token.
struct CacheEntry {
    std::string key;  // 64-hex sha256, also the filename stem
    std::string prompt;
    std::string model_name;
    json parameters;
    std::vector<std::string> first_tokens;
    std::vector<double> label_logprobs;
    std::string created_at;
};

inline std::string cache_key(const std::string& model_name, const std::string& prompt,
                             const json& parameters, const std::vector<std::string>& first_tokens) {
    std::string buf = std::to_string(model_name.size()) + ':' + model_name;
    buf += std::to_string(prompt.size()) + ':' + prompt;
    const std::string params = parameters.dump();
    buf += std::to_string(params.size()) + ':' + params;
    for (const auto& t : first_tokens) buf += std::to_string(t.size()) + ':' + t;
    return sha256_hex(buf);
}

namespace detail {

inline std::string utc_now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Exclusive advisory lock, released on destruction.
class FileLock {
public:
    explicit FileLock(const fs::path& p) {
        fd_ = ::open(p.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ >= 0) ::flock(fd_, LOCK_EX);
    }
    ~FileLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

inline void atomic_write(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp);
        if (!out) throw CacheError("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

}  // namespace detail

/// Content-addressed file cache: one <key>.json per entry, a manifest with
/// per-model entry counts, and probe-<key>.json sidecars holding first-token
/// probe results so offline replay never needs a tokenizer.
class ResponseCache {
public:
    explicit ResponseCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const { return dir_; }

    /// Key recomputed from the stored fields must match both the filename and
    /// the embedded key; any mismatch is reported as corruption.
    std::optional<CacheEntry> get(const std::string& key) const {
        const fs::path path = dir_ / (key + ".json");
        if (!fs::exists(path)) return std::nullopt;
        CacheEntry e = read_entry(path);
        const std::string recomputed =
            cache_key(e.model_name, e.prompt, e.parameters, e.first_tokens);
        if (recomputed != key || e.key != key) {
            throw CacheError("cache entry " + key + " fails key verification (recomputed " +
                             recomputed + ")");
        }
        return e;
    }

    void put(CacheEntry entry) {
        if (entry.created_at.empty()) entry.created_at = detail::utc_now_iso8601();
        const fs::path path = dir_ / (entry.key + ".json");
        const bool fresh = !fs::exists(path);
        json j{{"key", entry.key},
               {"prompt", entry.prompt},
               {"model_name", entry.model_name},
               {"parameters", entry.parameters},
               {"first_tokens", entry.first_tokens},
               {"label_logprobs", entry.label_logprobs},
               {"created_at", entry.created_at}};
        detail::atomic_write(path, j.dump(2) + "\n");
        if (fresh) bump_manifest(entry.model_name, 1);
    }

    // -- probe sidecars -----------------------------------------------------

    static std::string probe_key(const std::string& model_name,
                                 const std::vector<std::string>& verbalizers,
                                 const json& parameters) {
        std::string buf = std::to_string(model_name.size()) + ':' + model_name;
        for (const auto& v : verbalizers) buf += std::to_string(v.size()) + ':' + v;
        const std::string params = parameters.dump();
        buf += std::to_string(params.size()) + ':' + params;
        return sha256_hex(buf);
    }

    std::optional<std::vector<std::string>> get_probe(const std::string& key) const {
        const fs::path path = dir_ / ("probe-" + key + ".json");
        if (!fs::exists(path)) return std::nullopt;
        std::ifstream in(path);
        json j;
        try {
            in >> j;
            return j.at("first_tokens").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw CacheError(path.string() + ": malformed probe entry: " + e.what());
        }
    }

    void put_probe(const std::string& key, const std::string& model_name,
                   const std::vector<std::string>& verbalizers,
                   const std::vector<std::string>& first_tokens) {
        json j{{"model_name", model_name},
               {"verbalizers", verbalizers},
               {"first_tokens", first_tokens},
               {"created_at", detail::utc_now_iso8601()}};
        detail::atomic_write(dir_ / ("probe-" + key + ".json"), j.dump(2) + "\n");
    }

    // -- maintenance ----------------------------------------------------------

    /// Per-model entry counts, by scanning (the manifest is a convenience
    /// copy; the directory is the source of truth).
    std::map<std::string, std::size_t> scan_counts() const {
        std::map<std::string, std::size_t> counts;
        for (const auto& f : entry_paths()) {
            counts[read_entry(f).model_name] += 1;
        }
        return counts;
    }

    /// Keys whose recomputed hash no longer matches. Unreadable files are
    /// reported under their filename stem.
    std::vector<std::string> verify() const {
        std::vector<std::string> corrupt;
        for (const auto& f : entry_paths()) {
            const std::string stem = f.stem().string();
            try {
                CacheEntry e = read_entry(f);
                if (cache_key(e.model_name, e.prompt, e.parameters, e.first_tokens) != stem ||
                    e.key != stem) {
                    corrupt.push_back(stem);
                }
            } catch (const Error&) {
                corrupt.push_back(stem);
            }
        }
        return corrupt;
    }

    /// Removes entries whose model is not in `known_models`; returns count.
    std::size_t gc(const std::set<std::string>& known_models) {
        std::size_t removed = 0;
        for (const auto& f : entry_paths()) {
            if (known_models.count(read_entry(f).model_name) == 0) {
                fs::remove(f);
                ++removed;
            }
        }
        rewrite_manifest(scan_counts());
        return removed;
    }

    void rewrite_manifest(const std::map<std::string, std::size_t>& counts) {
        detail::FileLock lock(dir_ / "manifest.lock");
        detail::atomic_write(dir_ / "manifest.json", json{{"models", counts}}.dump(2) + "\n");
    }

    std::map<std::string, std::size_t> read_manifest() const {
        const fs::path path = dir_ / "manifest.json";
        if (!fs::exists(path)) return {};
        std::ifstream in(path);
        json j;
        try {
            in >> j;
            return j.at("models").get<std::map<std::string, std::size_t>>();
        } catch (const json::exception&) {
            return {};
        }
    }

private:
    std::vector<fs::path> entry_paths() const {
        std::vector<fs::path> files;
        for (const auto& de : fs::directory_iterator(dir_)) {
            if (!de.is_regular_file()) continue;
            const std::string name = de.path().filename().string();
            if (de.path().extension() == ".json" && name.rfind("probe-", 0) != 0 &&
                name != "manifest.json") {
                files.push_back(de.path());
            }
        }
        std::sort(files.begin(), files.end());
        return files;
    }

    static CacheEntry read_entry(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw CacheError("cannot open cache entry: " + path.string());
        json j;
        try {
            in >> j;
            CacheEntry e;
            e.key = j.at("key").get<std::string>();
            e.prompt = j.at("prompt").get<std::string>();
            e.model_name = j.at("model_name").get<std::string>();
            e.parameters = j.at("parameters");
            e.first_tokens = j.at("first_tokens").get<std::vector<std::string>>();
            e.label_logprobs = j.at("label_logprobs").get<std::vector<double>>();
            e.created_at = j.at("created_at").get<std::string>();
            return e;
        } catch (const json::exception& e) {
            throw CacheError(path.string() + ": malformed cache entry: " + e.what());
        }
    }

    void bump_manifest(const std::string& model_name, std::size_t delta) {
        detail::FileLock lock(dir_ / "manifest.lock");
        auto counts = read_manifest();
        counts[model_name] += delta;
        detail::atomic_write(dir_ / "manifest.json", json{{"models", counts}}.dump(2) + "\n");
    }

    fs::path dir_;
};

}  // namespace icl::lm
