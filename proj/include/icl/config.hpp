#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/calibrate.hpp"
#include "icl/corpus.hpp"
#include "icl/errors.hpp"
#include "icl/eval.hpp"
#include "icl/http_lm.hpp"
#include "icl/mock_lm.hpp"
#include "icl/select.hpp"
#include "icl/task_library.hpp"

namespace icl::config {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Declarative experiment description, one file per experiment. Flag
/// overrides (seed, method, k, endpoint, model, offline) are applied after
/// parsing and become part of the echoed config.
struct RunConfig {
    // task
    std::string task_name;
    std::string builtin;        // builtin task name, or
    fs::path template_file;     // explicit template file
    std::vector<std::string> schema{"input"};
    fs::path train_file;
    fs::path test_file;

    // model
    lm::BackendDescriptor backend;
    json mock_section;  // raw mock spec, resolved in make_backend()

    // sampling
    std::size_t pool_size = 100;
    std::uint64_t pool_seed = 0;
    bool pool_seed_set = false;  // explicit seed in config or via --seed
    std::size_t k = 1;
    select::Method method = select::Method::cbs_max_ig;
    calib::ContentFreeSet cf;

    // eval
    std::size_t k_shots = 1;
    std::size_t test_subsample = 300;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    bool post_calibrate = false;
    std::size_t concurrency = 8;

    // eval extras
    std::size_t probe_set_size = 20;      // order probing
    std::size_t max_permutations = 24;    // order probing
    std::size_t k_max = 10;               // top-k sweep

    fs::path cache_dir;
    fs::path output_dir = "runs";

    json echo;  // the effective config, re-serialized into every report
};

namespace detail {

inline std::uint64_t to_seed(const json& j) {
    return j.is_number_unsigned() ? j.get<std::uint64_t>()
                                  : static_cast<std::uint64_t>(j.get<std::int64_t>());
}

}  // namespace detail

inline RunConfig parse_config(const json& j, const fs::path& base_dir) {
    RunConfig cfg;
    auto resolve = [&](const std::string& p) -> fs::path {
        fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    try {
        const auto& task = j.at("task");
        cfg.task_name = task.value("name", "");
        if (task.contains("builtin")) cfg.builtin = task["builtin"].get<std::string>();
        if (task.contains("template_file")) {
            cfg.template_file = resolve(task["template_file"].get<std::string>());
        }
        if (cfg.builtin.empty() == cfg.template_file.empty()) {
            throw ConfigError("task needs exactly one of 'builtin' or 'template_file'");
        }
        if (task.contains("schema")) cfg.schema = task["schema"].get<std::vector<std::string>>();
        if (task.contains("train_file")) cfg.train_file = resolve(task["train_file"].get<std::string>());
        if (task.contains("test_file")) cfg.test_file = resolve(task["test_file"].get<std::string>());

        const auto& model = j.at("model");
        cfg.backend.kind = lm::backend_kind_from_string(model.value("kind", "http"));
        cfg.backend.model_name = model.at("name").get<std::string>();
        cfg.backend.endpoint = model.value("endpoint", "");
        if (model.contains("parameters")) {
            const auto& p = model["parameters"];
            cfg.backend.parameters.temperature = p.value("temperature", 0.0);
            cfg.backend.parameters.max_tokens = p.value("max_tokens", 1);
            cfg.backend.parameters.logprob_depth = p.value("logprob_depth", 100);
            cfg.backend.parameters.retry_attempts = p.value("retry_attempts", 5);
            cfg.backend.parameters.retry_base_ms = p.value("retry_base_ms", 1000);
        }
        if (model.contains("mock")) cfg.mock_section = model["mock"];

        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            cfg.pool_size = s.value("pool_size", std::size_t{100});
            if (s.contains("pool_seed")) {
                cfg.pool_seed = detail::to_seed(s["pool_seed"]);
                cfg.pool_seed_set = true;
            }
            cfg.k = s.value("k", std::size_t{1});
            if (s.contains("method")) cfg.method = select::method_from_string(s["method"]);
            if (s.contains("content_free")) {
                cfg.cf.strings = s["content_free"].get<std::vector<std::string>>();
            }
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            cfg.k_shots = e.value("k_shots", std::size_t{1});
            cfg.test_subsample = e.value("test_subsample", std::size_t{300});
            if (e.contains("seeds")) {
                cfg.seeds.clear();
                for (const auto& s : e["seeds"]) cfg.seeds.push_back(detail::to_seed(s));
            }
            cfg.post_calibrate = e.value("post_calibrate", false);
            cfg.concurrency = e.value("concurrency", std::size_t{8});
            cfg.probe_set_size = e.value("probe_set_size", std::size_t{20});
            cfg.max_permutations = e.value("max_permutations", std::size_t{24});
            cfg.k_max = e.value("k_max", std::size_t{10});
        }
        if (j.contains("cache_dir")) cfg.cache_dir = resolve(j["cache_dir"].get<std::string>());
        if (j.contains("output_dir")) cfg.output_dir = resolve(j["output_dir"].get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }

    cfg.backend.cache_dir = cfg.cache_dir;
    cfg.cf.validate();
    if (cfg.seeds.empty()) throw ConfigError("eval.seeds must be non-empty");
    if (cfg.test_subsample < 1) throw ConfigError("eval.test_subsample must be >= 1");
    cfg.echo = j;
    return cfg;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": malformed config: " + e.what());
    }
    auto cfg = parse_config(j, fs::absolute(path).parent_path());
    // referenced files must exist at load
    auto must_exist = [](const char* what, const fs::path& p) {
        if (!p.empty() && !fs::exists(p)) {
            throw ConfigError(std::string(what) + " does not exist: " + p.string());
        }
    };
    must_exist("template_file", cfg.template_file);
    must_exist("train_file", cfg.train_file);
    must_exist("test_file", cfg.test_file);
    return cfg;
}

inline corpus::Task load_task_for(const RunConfig& cfg) {
    auto task = cfg.builtin.empty() ? corpus::load_task(cfg.template_file)
                                    : corpus::builtin_task(cfg.builtin);
    return task;
}

/// Builds the configured backend. For mocks this wires up the planted
/// distributions (by prompt text or by training-example id) and registers
/// each rendered content-free prompt, so the empty-string content-free input
/// is recognized by exact match.
inline lm::LmBackendPtr make_backend(const RunConfig& cfg, const corpus::Task& task,
                                     const std::vector<corpus::Example>& train) {
    if (cfg.backend.kind != lm::BackendKind::mock) {
        return lm::make_backend(cfg.backend);
    }
    lm::MockLmSpec spec;
    const json& m = cfg.mock_section;
    if (m.contains("seed")) spec.seed = detail::to_seed(m["seed"]);
    if (m.contains("bias")) {
        spec.bias = m["bias"].get<std::vector<double>>();
    } else {
        spec.bias.assign(task.space->num_labels(), 1.0);
    }
    if (m.contains("planted_prompts")) {
        for (const auto& [prompt, dist] : m["planted_prompts"].items()) {
            spec.plant_prompt(prompt, dist.get<std::vector<double>>());
        }
    }
    if (m.contains("planted_examples")) {
        for (const auto& [id, dist] : m["planted_examples"].items()) {
            auto it = std::find_if(train.begin(), train.end(),
                                   [&](const corpus::Example& e) { return e.id == id; });
            if (it == train.end()) {
                throw ConfigError("planted_examples: no training example with id '" + id + "'");
            }
            spec.plant_prompt(corpus::render_zero_shot(*task.tmpl, *it),
                              dist.get<std::vector<double>>());
        }
    }
    for (const auto& s : cfg.cf.strings) {
        spec.register_content_free_prompt(
            corpus::render_zero_shot(*task.tmpl, corpus::content_free_example(*task.tmpl, s)));
    }
    return std::make_shared<lm::MockLm>(cfg.backend, std::move(spec));
}

}  // namespace icl::config
