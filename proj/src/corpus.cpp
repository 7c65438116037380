// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace undo::corpus {

using nlohmann::json;

namespace {

constexpr std::string_view kChoicePrefix = "choice.";

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

uint64_t uniform_below(std::mt19937_64& rng, uint64_t bound) {
    const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                           std::numeric_limits<uint64_t>::max() % bound;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

} // namespace

std::string_view to_string(AnswerKind kind) {
    switch (kind) {
    case AnswerKind::numeric: return "numeric";
    case AnswerKind::latex_numeric: return "latex-numeric";
    case AnswerKind::multiple_choice: return "multiple-choice";
    case AnswerKind::boolean: return "boolean";
    }
    return "numeric";
}

AnswerKind answer_kind_from_string(std::string_view s) {
    for (auto k : {AnswerKind::numeric, AnswerKind::latex_numeric, AnswerKind::multiple_choice,
                   AnswerKind::boolean}) {
        if (to_string(k) == s) return k;
    }
    throw Error(fmt::format("unknown answer kind '{}'", s));
}

CorpusError::CorpusError(size_t line, const std::string& what)
    : Error(line ? fmt::format("line {}: {}", line, what) : what), line_(line) {}

std::vector<Problem> parse_corpus(std::string_view text) {
    std::vector<Problem> problems;
    std::set<std::string> seen;
    auto lines = split_lines(text);
    for (size_t i = 0; i < lines.size(); ++i) {
        const size_t line_no = i + 1;
        if (trim(lines[i]).empty()) continue;
        json rec;
        try {
            rec = json::parse(lines[i]);
        } catch (const json::parse_error& e) {
            throw CorpusError(line_no, fmt::format("malformed JSON: {}", e.what()));
        }
        if (!rec.is_object()) throw CorpusError(line_no, "record is not a JSON object");
        for (const char* field : {"question", "answer"}) {
            if (!rec.contains(field)) throw CorpusError(line_no, fmt::format("missing required field '{}'", field));
            if (!rec[field].is_string() && !rec[field].is_number())
                throw CorpusError(line_no, fmt::format("field '{}' must be text", field));
        }

        Problem p;
        p.id = rec.contains("id") ? scalar_text(rec["id"]) : std::to_string(line_no);
        p.question = scalar_text(rec["question"]);
        p.gold_answer = scalar_text(rec["answer"]);
        for (auto& [key, value] : rec.items()) {
            if (key == "id" || key == "question" || key == "answer") continue;
            if (key == "suite") {
                p.suite = scalar_text(value);
            } else if (key == "choices") {
                if (!value.is_object()) throw CorpusError(line_no, "'choices' must be an object");
                for (auto& [letter, option] : value.items())
                    p.metadata[std::string(kChoicePrefix) + letter] = scalar_text(option);
            } else {
                p.metadata[key] = scalar_text(value);
            }
        }
        if (!seen.insert(p.id).second) throw CorpusError(line_no, fmt::format("duplicate id '{}'", p.id));
        problems.push_back(std::move(p));
    }
    return problems;
}

std::vector<Problem> load_corpus(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CorpusError(0, fmt::format("corpus file '{}' not found", path.string()));
    return parse_corpus(read_file(path));
}

std::string serialize_problem(const Problem& problem) {
    // ordered_json keeps insertion order, giving a stable byte layout.
    nlohmann::ordered_json rec;
    rec["id"] = problem.id;
    rec["question"] = problem.question;
    rec["answer"] = problem.gold_answer;
    if (auto it = problem.metadata.find("question_type"); it != problem.metadata.end())
        rec["question_type"] = it->second;
    nlohmann::ordered_json choices = nlohmann::ordered_json::object();
    for (auto& [key, value] : problem.metadata) {
        if (key.starts_with(kChoicePrefix)) choices[key.substr(kChoicePrefix.size())] = value;
    }
    if (!choices.empty()) rec["choices"] = choices;
    rec["suite"] = problem.suite;
    for (auto& [key, value] : problem.metadata) {
        if (key == "question_type" || key.starts_with(kChoicePrefix)) continue;
        rec[key] = value;
    }
    return rec.dump();
}

std::string serialize_corpus(std::span<const Problem> problems) {
    std::string out;
    for (const auto& p : problems) {
        out += serialize_problem(p);
        out += '\n';
    }
    return out;
}

PreprocessResult preprocess(std::span<const Problem> problems, const PreprocessRules& rules) {
    PreprocessResult result;
    std::set<std::string> rejected;
    for (const auto& r : rules.rejected_answers) rejected.insert(to_lower(trim(r)));

    for (const auto& p : problems) {
        if (rules.required_question_type) {
            auto it = p.metadata.find("question_type");
            if (it == p.metadata.end() || it->second != *rules.required_question_type) {
                ++result.dropped["question_type"];
                continue;
            }
        }
        if (trim(p.question).empty()) {
            ++result.dropped["empty_question"];
            continue;
        }
        const std::string answer = to_lower(trim(p.gold_answer));
        if (answer.empty()) {
            ++result.dropped["empty"];
            continue;
        }
        if (rejected.contains(answer)) {
            ++result.dropped[answer];
            continue;
        }
        result.problems.push_back(p);
    }
    return result;
}

CorpusSplit split_validation(std::span<const Problem> problems, size_t m, uint64_t seed) {
    if (problems.size() <= m) {
        throw Error(fmt::format("cannot draw {} validation problems from a corpus of {}", m, problems.size()));
    }
    std::vector<size_t> order(problems.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < m; ++i) {
        size_t j = i + static_cast<size_t>(uniform_below(rng, order.size() - i));
        std::swap(order[i], order[j]);
    }
    std::vector<bool> in_validation(problems.size(), false);
    for (size_t i = 0; i < m; ++i) in_validation[order[i]] = true;

    CorpusSplit split;
    split.seed = seed;
    for (size_t i = 0; i < problems.size(); ++i) {
        (in_validation[i] ? split.validation : split.train).push_back(problems[i]);
    }
    return split;
}

const std::vector<SuiteInfo>& suite_registry() {
    static const std::vector<SuiteInfo> registry{
        {"gsm8k", AnswerKind::numeric, 1319, 0},
        {"math500", AnswerKind::latex_numeric, 500, 0},
        {"mmlu_pro", AnswerKind::multiple_choice, 1351, 0},
        {"svamp", AnswerKind::numeric, 1000, 0},
        {"strategyqa", AnswerKind::boolean, 687, 4},
        {"theoremqa", AnswerKind::latex_numeric, 800, 5},
    };
    return registry;
}

const SuiteInfo& suite_info(std::string_view name) {
    for (const auto& info : suite_registry()) {
        if (info.name == name) return info;
    }
    std::string known;
    for (const auto& info : suite_registry()) known += (known.empty() ? "" : ", ") + info.name;
    throw Error(fmt::format("unknown suite '{}' (known suites: {})", name, known));
}

std::vector<FewShotExample> load_few_shot(const std::filesystem::path& path) {
    std::vector<FewShotExample> out;
    auto lines = split_lines(read_file(path));
    for (size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        json rec;
        try {
            rec = json::parse(lines[i]);
        } catch (const json::parse_error& e) {
            throw CorpusError(i + 1, fmt::format("malformed JSON: {}", e.what()));
        }
        if (!rec.contains("question") || !rec.contains("rationale"))
            throw CorpusError(i + 1, "few-shot record needs 'question' and 'rationale'");
        out.push_back({rec["question"].get<std::string>(), rec["rationale"].get<std::string>()});
    }
    return out;
}

TestSuite load_test_suite(const std::filesystem::path& path, std::string_view name,
                          const std::optional<std::filesystem::path>& few_shot_path) {
    const SuiteInfo& info = suite_info(name);
    TestSuite suite;
    suite.name = info.name;
    suite.answer_kind = info.kind;
    suite.few_shot_k = info.few_shot_k;
    suite.problems = load_corpus(path);
    for (auto& p : suite.problems) p.suite = info.name;
    suite.size = suite.problems.size();
    if (suite.size != info.expected_size) {
        suite.warnings.push_back(fmt::format("suite '{}' has {} problems, registry expects {}", info.name,
                                             suite.size, info.expected_size));
        spdlog::warn("{}", suite.warnings.back());
    }
    if (few_shot_path) suite.few_shot = load_few_shot(*few_shot_path);
    return suite;
}

} // namespace undo::corpus
