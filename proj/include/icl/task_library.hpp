#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/corpus.hpp"
#include "icl/errors.hpp"

namespace icl::corpus {

/// A template file bundles the prompt format with the task's label space.
struct Task {
    PromptTemplatePtr tmpl;
    LabelSpacePtr space;
};

inline json task_to_json(const Task& task) {
    return json{{"task_name", task.tmpl->task_name},
                {"header", task.tmpl->header},
                {"example_pattern", task.tmpl->example_pattern},
                {"query_pattern", task.tmpl->query_pattern},
                {"separator", task.tmpl->separator},
                {"labels", task.space->verbalizers}};
}

inline Task task_from_json(const json& j, const std::string& origin) {
    try {
        auto tmpl = std::make_shared<PromptTemplate>();
        tmpl->task_name = j.at("task_name").get<std::string>();
        tmpl->header = j.at("header").get<std::string>();
        tmpl->example_pattern = j.at("example_pattern").get<std::string>();
        tmpl->query_pattern = j.at("query_pattern").get<std::string>();
        tmpl->separator = j.at("separator").get<std::string>();
        tmpl->validate();

        auto space = std::make_shared<LabelSpace>();
        space->task_name = tmpl->task_name;
        space->verbalizers = j.at("labels").get<std::vector<std::string>>();
        space->validate();
        return Task{std::move(tmpl), std::move(space)};
    } catch (const json::exception& e) {
        throw ParseError(origin + ": bad template file: " + e.what());
    }
}

inline Task load_task(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open template file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": malformed template file: " + e.what());
    }
    return task_from_json(j, path.string());
}

inline void save_task(const Task& task, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write template file: " + path.string());
    out << task_to_json(task).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Built-in tasks
// ---------------------------------------------------------------------------

namespace detail {

inline Task make_task(std::string name, std::string header, std::string example_pattern,
                      std::string query_pattern, std::string separator,
                      std::vector<std::string> labels) {
    auto tmpl = std::make_shared<PromptTemplate>();
    tmpl->task_name = std::move(name);
    tmpl->header = std::move(header);
    tmpl->example_pattern = std::move(example_pattern);
    tmpl->query_pattern = std::move(query_pattern);
    tmpl->separator = std::move(separator);
    tmpl->validate();
    auto space = std::make_shared<LabelSpace>();
    space->task_name = tmpl->task_name;
    space->verbalizers = std::move(labels);
    space->validate();
    return Task{std::move(tmpl), std::move(space)};
}

}  // namespace detail

inline const std::vector<std::string>& builtin_task_names() {
    static const std::vector<std::string> names{"sst2", "agnews", "trec", "cb", "rte", "dbpedia"};
    return names;
}

/// Fixed prompt formats and verbalizer sets for the six shipped tasks.
inline Task builtin_task(const std::string& name) {
    if (name == "sst2") {
        return detail::make_task("sst2", "", "Review: {input}\nSentiment: {label}",
                                 "Review: {input}\nSentiment:", "\n\n", {"Negative", "Positive"});
    }
    if (name == "agnews") {
        return detail::make_task("agnews", "", "Article: {input}\nAnswer: {label}",
                                 "Article: {input}\nAnswer:", "\n\n",
                                 {"World", "Sports", "Business", "Technology"});
    }
    if (name == "trec") {
        return detail::make_task(
            "trec",
            "Classify the questions based on whether their answer type is a Number, Location, "
            "Person, Description, Entity, or Abbreviation.\n\n",
            "Question: {input}\nAnswer Type: {label}", "Question: {input}\nAnswer Type:", "\n\n",
            {"Number", "Location", "Person", "Description", "Entity", "Abbreviation"});
    }
    if (name == "cb") {
        return detail::make_task(
            "cb", "", "{premise}\nquestion: {hypothesis} True, False, or Neither?\nanswer: {label}",
            "{premise}\nquestion: {hypothesis} True, False, or Neither?\nanswer:", "\n\n",
            {"True", "False", "Neither"});
    }
    if (name == "rte") {
        return detail::make_task("rte", "",
                                 "{premise}\nquestion: {hypothesis} True or False?\nanswer: {label}",
                                 "{premise}\nquestion: {hypothesis} True or False?\nanswer:", "\n\n",
                                 {"True", "False"});
    }
    if (name == "dbpedia") {
        return detail::make_task(
            "dbpedia",
            "Classify the documents based on whether they are about a Company, School, Artist, "
            "Athlete, Politician, Transportation, Building, Nature, Village, Animal, Plant, Album, "
            "Film, or Book.\n\n",
            "Article: {input}\nAnswer: {label}", "Article: {input}\nAnswer:", "\n\n",
            {"Company", "School", "Artist", "Athlete", "Politician", "Transportation", "Building",
             "Nature", "Village", "Animal", "Plant", "Album", "Film", "Book"});
    }
    throw ConfigError("unknown builtin task: " + name);
}

}  // namespace icl::corpus
