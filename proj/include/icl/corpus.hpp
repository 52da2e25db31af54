#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/errors.hpp"
#include "icl/rng.hpp"

namespace icl::corpus {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Label space
// ---------------------------------------------------------------------------

/// Ordered label set for one task; index in `verbalizers` is the label id.
struct LabelSpace {
    std::string task_name;
    std::vector<std::string> verbalizers;

    std::size_t num_labels() const { return verbalizers.size(); }

    const std::string& verbalizer(int label_id) const {
        if (label_id < 0 || static_cast<std::size_t>(label_id) >= verbalizers.size()) {
            throw LabelError("label id " + std::to_string(label_id) + " outside label space of " +
                             task_name + " (L=" + std::to_string(verbalizers.size()) + ")");
        }
        return verbalizers[static_cast<std::size_t>(label_id)];
    }

    /// Id for a verbalizer string, or nullopt.
    std::optional<int> find(std::string_view verbalizer_text) const {
        for (std::size_t i = 0; i < verbalizers.size(); ++i) {
            if (verbalizers[i] == verbalizer_text) return static_cast<int>(i);
        }
        return std::nullopt;
    }

    void validate() const {
        if (verbalizers.size() < 2) {
            throw LabelError("label space '" + task_name + "' needs at least 2 labels");
        }
        for (std::size_t i = 0; i < verbalizers.size(); ++i) {
            if (verbalizers[i].empty()) {
                throw LabelError("label space '" + task_name + "': empty verbalizer at id " +
                                 std::to_string(i));
            }
            for (std::size_t j = i + 1; j < verbalizers.size(); ++j) {
                if (verbalizers[i] == verbalizers[j]) {
                    throw LabelError("label space '" + task_name + "': duplicate verbalizer '" +
                                     verbalizers[i] + "'");
                }
            }
        }
    }
};

using LabelSpacePtr = std::shared_ptr<const LabelSpace>;

// ---------------------------------------------------------------------------
// Prompt template
// ---------------------------------------------------------------------------

/// Pattern placeholders are written {name}. {label} marks the verbalizer slot
/// in example_pattern; every other placeholder names an input field. All
/// whitespace and newline conventions live in the stored strings, never in
/// rendering code.
struct PromptTemplate {
    std::string task_name;
    std::string header;           // may be empty; includes its own trailing separator
    std::string example_pattern;  // one {label}, one slot per input field
    std::string query_pattern;    // ends exactly at the answer position
    std::string separator;        // between blocks

    /// Placeholder names in order of appearance (may contain "label").
    static std::vector<std::string> placeholders(std::string_view pattern) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < pattern.size();) {
            if (pattern[i] != '{') {
                ++i;
                continue;
            }
            auto close = pattern.find('}', i);
            if (close == std::string_view::npos) {
                throw TemplateError("unterminated placeholder in pattern: " + std::string(pattern));
            }
            names.emplace_back(pattern.substr(i + 1, close - i - 1));
            i = close + 1;
        }
        return names;
    }

    /// Input field names used by the query pattern.
    std::vector<std::string> input_fields() const {
        auto names = placeholders(query_pattern);
        std::vector<std::string> fields;
        for (auto& n : names) {
            if (n != "label") fields.push_back(n);
        }
        return fields;
    }

    void validate() const {
        auto count = [](const std::vector<std::string>& names, std::string_view what) {
            return std::count(names.begin(), names.end(), what);
        };
        auto ex = placeholders(example_pattern);
        if (count(ex, "label") != 1) {
            throw TemplateError("template '" + task_name +
                                "': example_pattern must contain exactly one {label}");
        }
        auto qy = placeholders(query_pattern);
        if (count(qy, "label") != 0) {
            throw TemplateError("template '" + task_name + "': query_pattern must not contain {label}");
        }
        if (qy.empty()) {
            throw TemplateError("template '" + task_name +
                                "': query_pattern needs at least one input placeholder");
        }
        for (auto names : {ex, qy}) {
            std::sort(names.begin(), names.end());
            if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
                throw TemplateError("template '" + task_name + "': repeated placeholder in pattern");
            }
        }
    }
};

using PromptTemplatePtr = std::shared_ptr<const PromptTemplate>;

// ---------------------------------------------------------------------------
// Examples and pools
// ---------------------------------------------------------------------------

struct Example {
    std::string id;
    std::map<std::string, std::string> input_fields;
    std::optional<int> gold_label;
};

struct CandidatePool {
    std::vector<Example> examples;  // post-shuffle order
    std::string source_dataset;
    std::uint64_t subsample_seed = 0;
    std::size_t subsample_size = 0;
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fill_pattern(const std::string& pattern,
                                const std::map<std::string, std::string>& fields,
                                const std::string* label_text, const std::string& context) {
    std::string out;
    out.reserve(pattern.size() + 64);
    for (std::size_t i = 0; i < pattern.size();) {
        if (pattern[i] != '{') {
            out.push_back(pattern[i]);
            ++i;
            continue;
        }
        auto close = pattern.find('}', i);
        std::string name = pattern.substr(i + 1, close - i - 1);
        if (name == "label") {
            if (!label_text) {
                throw TemplateError(context + ": {label} not available in this position");
            }
            out += *label_text;
        } else {
            auto it = fields.find(name);
            if (it == fields.end()) {
                throw TemplateError(context + ": missing input field '" + name + "'");
            }
            out += it->second;
        }
        i = close + 1;
    }
    return out;
}

}  // namespace detail

/// Zero-shot prompt: header + query pattern with the candidate filled in.
/// Byte-exact and stable across runs.
inline std::string render_zero_shot(const PromptTemplate& tmpl, const Example& candidate) {
    return tmpl.header +
           detail::fill_pattern(tmpl.query_pattern, candidate.input_fields, nullptr,
                                "render '" + candidate.id + "' with template '" + tmpl.task_name + "'");
}

/// Few-shot prompt: header, demo blocks each terminated by the separator,
/// then the query block. Zero demos reduces byte-for-byte to render_zero_shot.
inline std::string render_few_shot(const PromptTemplate& tmpl, const LabelSpace& space,
                                   const std::vector<std::pair<Example, int>>& demos,
                                   const Example& query) {
    std::string out = tmpl.header;
    for (const auto& [demo, label_id] : demos) {
        const std::string& verb = space.verbalizer(label_id);
        out += detail::fill_pattern(tmpl.example_pattern, demo.input_fields, &verb,
                                    "render demo '" + demo.id + "' with template '" + tmpl.task_name +
                                        "'");
        out += tmpl.separator;
    }
    out += detail::fill_pattern(tmpl.query_pattern, query.input_fields, nullptr,
                                "render '" + query.id + "' with template '" + tmpl.task_name + "'");
    return out;
}

/// An example whose every input field is the given content-free string.
inline Example content_free_example(const PromptTemplate& tmpl, const std::string& cf_string) {
    Example e;
    e.id = "cf:" + cf_string;
    for (const auto& f : tmpl.input_fields()) e.input_fields[f] = cf_string;
    return e;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// Line-delimited JSON records. Ids are "<file-stem>:<line>" with 1-based
/// line numbers; blank lines are skipped but still counted. The "label"
/// field, when present, holds either an integer id or a verbalizer string
/// (string form requires `space`).
inline std::vector<Example> load_dataset(const std::filesystem::path& path,
                                         const std::vector<std::string>& schema,
                                         const LabelSpace* space = nullptr) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path.string());
    const std::string stem = path.stem().string();

    std::vector<Example> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": malformed record: " + e.what());
        }
        Example ex;
        ex.id = stem + ":" + std::to_string(line_no);
        for (const auto& field : schema) {
            if (!rec.contains(field) || !rec[field].is_string()) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": missing or non-string field '" + field + "'");
            }
            ex.input_fields[field] = rec[field].get<std::string>();
        }
        if (rec.contains("label") && !rec["label"].is_null()) {
            const auto& lab = rec["label"];
            if (lab.is_number_integer()) {
                int id = lab.get<int>();
                if (space && (id < 0 || static_cast<std::size_t>(id) >= space->num_labels())) {
                    throw LabelError(path.string() + ":" + std::to_string(line_no) + ": label id " +
                                     std::to_string(id) + " outside label space");
                }
                ex.gold_label = id;
            } else if (lab.is_string()) {
                if (!space) {
                    throw LabelError(path.string() + ":" + std::to_string(line_no) +
                                     ": string label '" + lab.get<std::string>() +
                                     "' needs a label space to map");
                }
                auto id = space->find(lab.get<std::string>());
                if (!id) {
                    throw LabelError(path.string() + ":" + std::to_string(line_no) + ": label '" +
                                     lab.get<std::string>() + "' not in label space of " +
                                     space->task_name);
                }
                ex.gold_label = *id;
            } else {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": label must be integer id or verbalizer string");
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pool sub-sampling
// ---------------------------------------------------------------------------

/// Uniform sample of n examples without replacement: one seeded shuffle,
/// prefix-take. Pool order is the shuffled order.
inline CandidatePool subsample_pool(const std::vector<Example>& examples, std::size_t n,
                                    std::uint64_t seed, std::string source_dataset = "") {
    if (n > examples.size()) {
        throw SizeError("subsample of " + std::to_string(n) + " from " +
                        std::to_string(examples.size()) + " examples");
    }
    auto idx = shuffled_indices(examples.size(), seed);
    CandidatePool pool;
    pool.source_dataset = std::move(source_dataset);
    pool.subsample_seed = seed;
    pool.subsample_size = n;
    pool.examples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.examples.push_back(examples[idx[i]]);
    return pool;
}

// ---------------------------------------------------------------------------
// Pool file IO
// ---------------------------------------------------------------------------

inline json pool_to_json(const CandidatePool& pool) {
    json exs = json::array();
    for (const auto& e : pool.examples) {
        json rec{{"id", e.id}, {"fields", e.input_fields}};
        if (e.gold_label) rec["label"] = *e.gold_label;
        exs.push_back(std::move(rec));
    }
    return json{{"source_dataset", pool.source_dataset},
                {"subsample_seed", pool.subsample_seed},
                {"subsample_size", pool.subsample_size},
                {"examples", std::move(exs)}};
}

inline CandidatePool pool_from_json(const json& j) {
    CandidatePool pool;
    pool.source_dataset = j.at("source_dataset").get<std::string>();
    pool.subsample_seed = j.at("subsample_seed").get<std::uint64_t>();
    pool.subsample_size = j.at("subsample_size").get<std::size_t>();
    for (const auto& rec : j.at("examples")) {
        Example e;
        e.id = rec.at("id").get<std::string>();
        e.input_fields = rec.at("fields").get<std::map<std::string, std::string>>();
        if (rec.contains("label")) e.gold_label = rec["label"].get<int>();
        pool.examples.push_back(std::move(e));
    }
    if (pool.examples.size() != pool.subsample_size) {
        throw ParseError("pool file: example count " + std::to_string(pool.examples.size()) +
                         " != subsample_size " + std::to_string(pool.subsample_size));
    }
    return pool;
}

inline void save_pool(const CandidatePool& pool, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write pool file: " + path.string());
    out << pool_to_json(pool).dump(2) << '\n';
}

inline CandidatePool load_pool(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open pool file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": malformed pool file: " + e.what());
    }
    return pool_from_json(j);
}

}  // namespace icl::corpus
