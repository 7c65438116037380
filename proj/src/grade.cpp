// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/grade.hpp"

#include <cmath>
#include <regex>
#include <stdexcept>

#include <fmt/format.h>

namespace undo::grade {

using nlohmann::json;

namespace {

// Returns the brace-balanced group starting at `open` (which must index '{'),
// excluding the braces, or nullopt if it never closes.
std::optional<std::string> balanced_group(std::string_view text, size_t open) {
    if (open >= text.size() || text[open] != '{') return std::nullopt;
    int depth = 0;
    for (size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\\') {
            ++i;
            continue;
        }
        if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return std::string(text.substr(open + 1, i - open - 1));
    }
    return std::nullopt;
}

// If the whole string is `\boxed{X}` or `\fbox{X}`, returns X.
std::optional<std::string> unwrap_boxed(std::string_view s) {
    for (std::string_view cmd : {"\\boxed", "\\fbox"}) {
        if (!s.starts_with(cmd)) continue;
        size_t open = cmd.size();
        while (open < s.size() && s[open] == ' ') ++open;
        auto inner = balanced_group(s, open);
        if (!inner) return std::nullopt;
        if (open + inner->size() + 2 == s.size()) return trim(*inner);
    }
    return std::nullopt;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += c;
    }
    return out;
}

bool ends_with(std::string_view s, std::string_view suffix) { return s.ends_with(suffix); }

std::string strip_answer_decoration(std::string s) {
    s = trim(s);
    while (auto inner = unwrap_boxed(s)) s = *inner;

    s = replace_all(std::move(s), "$", "");
    s = replace_all(std::move(s), "\\dfrac", "\\frac");
    s = replace_all(std::move(s), "\\tfrac", "\\frac");
    static const std::regex sizing(R"(\\(left|right)(?![A-Za-z]))");
    s = std::regex_replace(s, sizing, "");
    s = replace_all(std::move(s), "{,}", ",");
    s = replace_all(std::move(s), "\\!", "");
    s = replace_all(std::move(s), "\\,", "");
    static const std::regex text_wrapper(R"(\\(text|textbf|mathrm|mbox)\{([^{}]*)\})");
    s = std::regex_replace(s, text_wrapper, "$2");
    s = collapse_whitespace(s);

    // Trailing punctuation and units that never change the value.
    for (bool changed = true; changed;) {
        changed = false;
        for (std::string_view suffix : {".", "\\%", "%", "^\\circ", "^{\\circ}", "\xC2\xB0", " "}) {
            if (s.size() > suffix.size() && ends_with(s, suffix)) {
                s.resize(s.size() - suffix.size());
                changed = true;
            }
        }
    }

    static const std::regex thousands(R"((\d),(\d{3})(?!\d))");
    for (std::string prev; prev != s;) {
        prev = s;
        s = std::regex_replace(s, thousands, "$1$2");
    }

    static const std::regex assignment(R"(^[A-Za-z]\s*=\s*(.+)$)");
    std::smatch m;
    if (std::regex_match(s, m, assignment)) s = m[1].str();
    return trim(s);
}

bool is_numeric(const Canonical& c) {
    return std::holds_alternative<Rational>(c) || std::holds_alternative<Real>(c);
}

double numeric_value(const Canonical& c) {
    if (auto* r = std::get_if<Rational>(&c)) return r->to_double();
    return std::get<Real>(c).value;
}

bool close_enough(double a, double b) {
    double scale = std::max(std::abs(a), std::abs(b));
    return std::abs(a - b) <= std::max(1e-9, 1e-6 * scale);
}

// Applies the suite's answer convention to free text: "(B) 42" or "B." as a
// choice letter, "Yes, because ..." as a boolean.
Canonical coerce_for_kind(const Canonical& c, corpus::AnswerKind kind) {
    const auto* text = std::get_if<Text>(&c);
    if (!text) return c;
    if (kind == corpus::AnswerKind::multiple_choice) {
        static const std::regex leading_letter(R"(^\(?([A-J])[\).:](\s.*)?$)");
        std::smatch m;
        if (std::regex_match(text->value, m, leading_letter)) return Choice{m[1].str()[0]};
    }
    if (kind == corpus::AnswerKind::boolean) {
        static const std::regex leading_word(R"(^([A-Za-z]+)\b.*$)");
        std::smatch m;
        if (std::regex_match(text->value, m, leading_word)) {
            auto word = to_lower(m[1].str());
            if (word == "yes" || word == "true") return Boolean{true};
            if (word == "no" || word == "false") return Boolean{false};
        }
    }
    return c;
}

bool match_via_choices(const Choice& letter, const Canonical& other,
                       const std::map<std::string, std::string>& choices) {
    auto it = choices.find(fmt::format("choice.{}", letter.letter));
    if (it == choices.end()) return false;
    return answers_match(normalize_answer(it->second), other, nullptr);
}

} // namespace

std::string canonical_string(const Canonical& c) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) return "";
            else if constexpr (std::is_same_v<T, Rational>) return v.str();
            else if constexpr (std::is_same_v<T, Real>) return fmt::format("{:.12g}", v.value);
            else if constexpr (std::is_same_v<T, Choice>) return std::string(1, v.letter);
            else if constexpr (std::is_same_v<T, Boolean>) return v.value ? "true" : "false";
            else return v.value;
        },
        c);
}

bool is_empty(const Canonical& c) { return std::holds_alternative<std::monostate>(c); }

Canonical normalize_answer(std::string_view raw) {
    std::string s = strip_answer_decoration(std::string(raw));
    if (s.empty()) return std::monostate{};

    const std::string lower = to_lower(s);
    if (lower == "yes" || lower == "true") return Boolean{true};
    if (lower == "no" || lower == "false") return Boolean{false};

    static const std::regex choice(R"(^\(?([A-J])\)?$)");
    std::smatch m;
    if (std::regex_match(s, m, choice)) return Choice{m[1].str()[0]};

    if (auto number = evaluate_expression(s)) {
        if (number->exact) return number->rational;
        return Real{number->real};
    }
    return Text{s};
}

std::string_view to_string(ExtractionSource s) {
    switch (s) {
    case ExtractionSource::boxed: return "boxed";
    case ExtractionSource::final_answer_line: return "final_answer_line";
    case ExtractionSource::last_number: return "last_number";
    case ExtractionSource::none: return "none";
    }
    return "none";
}

ExtractionSource extraction_source_from_string(std::string_view s) {
    for (auto v : {ExtractionSource::boxed, ExtractionSource::final_answer_line, ExtractionSource::last_number,
                   ExtractionSource::none}) {
        if (to_string(v) == s) return v;
    }
    throw Error(fmt::format("unknown extraction source '{}'", s));
}

std::optional<std::string> last_boxed(std::string_view text) {
    std::vector<std::pair<size_t, size_t>> starts; // (position, command length)
    for (std::string_view cmd : {"\\boxed", "\\fbox"}) {
        for (size_t pos = text.find(cmd); pos != std::string_view::npos; pos = text.find(cmd, pos + 1))
            starts.emplace_back(pos, cmd.size());
    }
    std::sort(starts.begin(), starts.end());
    for (auto it = starts.rbegin(); it != starts.rend(); ++it) {
        size_t open = it->first + it->second;
        while (open < text.size() && text[open] == ' ') ++open;
        if (auto inner = balanced_group(text, open)) {
            auto content = trim(*inner);
            if (!is_empty(normalize_answer(content))) return content;
        }
    }
    return std::nullopt;
}

ExtractedAnswer extract_final_answer(std::string_view rationale) {
    ExtractedAnswer out;
    auto accept = [&out](std::string raw, ExtractionSource source) {
        auto canonical = normalize_answer(raw);
        if (is_empty(canonical)) return false;
        out.raw = std::move(raw);
        out.canonical = std::move(canonical);
        out.source = source;
        return true;
    };

    if (auto boxed = last_boxed(rationale); boxed && accept(*boxed, ExtractionSource::boxed)) return out;

    const std::string lower = to_lower(rationale);
    constexpr std::string_view marker = "final answer:";
    if (size_t pos = lower.rfind(marker); pos != std::string::npos) {
        size_t begin = pos + marker.size();
        size_t end = rationale.find('\n', begin);
        std::string line = trim(rationale.substr(begin, end == std::string_view::npos ? end : end - begin));
        while (!line.empty() && std::string_view(".,;:!").find(line.back()) != std::string_view::npos) {
            line.pop_back();
            line = trim(line);
        }
        if (line.size() >= 2 && line.front() == '$' && line.back() == '$') line = trim(line.substr(1, line.size() - 2));
        while (auto inner = unwrap_boxed(line)) line = *inner;
        if (accept(line, ExtractionSource::final_answer_line)) return out;
    }

    static const std::regex number(R"(-?\d+(?:,\d{3})*(?:\.\d+)?)");
    std::string text(rationale);
    std::string last;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it)
        last = it->str();
    if (!last.empty() && accept(last, ExtractionSource::last_number)) return out;

    return ExtractedAnswer{};
}

bool answers_match(const Canonical& a, const Canonical& b, const std::map<std::string, std::string>* choices) {
    if (is_empty(a) || is_empty(b)) return false;
    if (std::holds_alternative<Rational>(a) && std::holds_alternative<Rational>(b))
        return std::get<Rational>(a) == std::get<Rational>(b);
    if (is_numeric(a) && is_numeric(b)) return close_enough(numeric_value(a), numeric_value(b));
    if (a.index() == b.index()) return a == b;
    if (choices) {
        if (auto* letter = std::get_if<Choice>(&a)) return match_via_choices(*letter, b, *choices);
        if (auto* letter = std::get_if<Choice>(&b)) return match_via_choices(*letter, a, *choices);
    }
    return false;
}

int score(const ExtractedAnswer& extracted, std::string_view gold, corpus::AnswerKind kind,
          const std::map<std::string, std::string>* choices) {
    if (trim(gold).empty()) throw std::invalid_argument("gold answer is empty");
    if (extracted.source == ExtractionSource::none) return 0;
    Canonical g = coerce_for_kind(normalize_answer(gold), kind);
    Canonical c = coerce_for_kind(extracted.canonical, kind);
    return answers_match(c, g, choices) ? 1 : 0;
}

json to_json(const GradedGeneration& g) {
    return json{{"problem_id", g.problem_id},
                {"generation", g.generation},
                {"extracted_raw", g.extracted.raw},
                {"extracted_canonical", canonical_string(g.extracted.canonical)},
                {"source", to_string(g.extracted.source)},
                {"score", g.score}};
}

GradedGeneration graded_from_json(const json& j) {
    GradedGeneration g;
    g.problem_id = j.at("problem_id").get<std::string>();
    g.generation = j.at("generation").get<std::string>();
    g.extracted.raw = j.at("extracted_raw").get<std::string>();
    g.extracted.source = extraction_source_from_string(j.at("source").get<std::string>());
    if (g.extracted.source != ExtractionSource::none) g.extracted.canonical = normalize_answer(g.extracted.raw);
    g.score = j.at("score").get<int>();
    if (g.score != 0 && g.score != 1) throw Error(fmt::format("score for '{}' is not 0 or 1", g.problem_id));
    return g;
}

std::vector<GradedGeneration> load_graded(const std::filesystem::path& path) {
    std::vector<GradedGeneration> out;
    auto lines = split_lines(read_file(path));
    for (size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        try {
            out.push_back(graded_from_json(json::parse(lines[i])));
        } catch (const std::exception& e) {
            throw Error(fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
        }
    }
    return out;
}

std::string serialize_graded(std::span<const GradedGeneration> graded) {
    std::string out;
    for (const auto& g : graded) {
        out += to_json(g).dump();
        out += '\n';
    }
    return out;
}

GradedGeneration grade_one(const corpus::Problem& problem, std::string generation, corpus::AnswerKind kind) {
    GradedGeneration g;
    g.problem_id = problem.id;
    g.extracted = extract_final_answer(generation);
    g.generation = std::move(generation);
    g.score = score(g.extracted, problem.gold_answer, kind, &problem.metadata);
    return g;
}

std::vector<GradedGeneration> grade_batch(std::span<const std::pair<std::string, std::string>> generations,
                                          const std::map<std::string, corpus::Problem>& problems,
                                          corpus::AnswerKind kind) {
    std::vector<GradedGeneration> out;
    out.reserve(generations.size());
    for (const auto& [id, text] : generations) {
        auto it = problems.find(id);
        if (it == problems.end()) throw Error(fmt::format("unknown problem id '{}'", id));
        out.push_back(grade_one(it->second, text, kind));
    }
    return out;
}

SuiteMetrics SuiteMetrics::from_counts(std::string suite, size_t n, size_t correct) {
    if (n == 0) throw Error(fmt::format("suite '{}' has no graded problems", suite));
    if (correct > n) throw Error(fmt::format("suite '{}': {} correct out of {}", suite, correct, n));
    return SuiteMetrics{std::move(suite), n, correct, static_cast<double>(correct) / static_cast<double>(n), false};
}

SuiteMetrics SuiteMetrics::from_reported(std::string suite, size_t n, double accuracy) {
    if (n == 0) throw Error(fmt::format("suite '{}' has size 0", suite));
    if (accuracy < 0.0 || accuracy > 1.0) throw Error(fmt::format("suite '{}': accuracy {} outside [0,1]", suite, accuracy));
    auto correct = static_cast<size_t>(std::llround(accuracy * static_cast<double>(n)));
    return SuiteMetrics{std::move(suite), n, correct, accuracy, true};
}

json to_json(const SuiteMetrics& m) {
    json j{{"suite", m.suite}, {"n", m.n}, {"correct", m.correct}, {"accuracy", m.accuracy}};
    if (m.reported) j["reported"] = true;
    return j;
}

SuiteMetrics metrics_from_json(const json& j) {
    auto suite = j.at("suite").get<std::string>();
    auto n = j.at("n").get<size_t>();
    if (j.value("reported", false) || !j.contains("correct"))
        return SuiteMetrics::from_reported(suite, n, j.at("accuracy").get<double>());
    auto m = SuiteMetrics::from_counts(suite, n, j.at("correct").get<size_t>());
    if (j.contains("accuracy") && std::abs(j["accuracy"].get<double>() - m.accuracy) > 1e-12)
        throw Error(fmt::format("suite '{}': accuracy disagrees with correct/n", suite));
    return m;
}

SuiteMetrics accuracy(std::span<const GradedGeneration> graded, std::string suite) {
    if (graded.empty()) throw Error("accuracy of an empty grading list is undefined");
    size_t correct = 0;
    for (const auto& g : graded) correct += static_cast<size_t>(g.score);
    return SuiteMetrics::from_counts(std::move(suite), graded.size(), correct);
}

double weighted_average(std::span<const SuiteMetrics> per_suite) {
    if (per_suite.empty()) throw Error("weighted average of no suites");
    double num = 0.0, den = 0.0;
    for (const auto& m : per_suite) {
        if (m.n == 0) throw Error(fmt::format("suite '{}' has size 0", m.suite));
        num += m.accuracy * static_cast<double>(m.n);
        den += static_cast<double>(m.n);
    }
    return num / den;
}

double mcnemar_exact_p(size_t b, size_t c) {
    const size_t n = b + c;
    if (n == 0) return 1.0;
    const size_t k = std::min(b, c);
    const long double log_half_n = -static_cast<long double>(n) * std::log(2.0L);
    const long double log_n_fact = std::lgamma(static_cast<long double>(n) + 1);
    long double tail = 0.0L;
    for (size_t i = 0; i <= k; ++i) {
        long double log_choose = log_n_fact - std::lgamma(static_cast<long double>(i) + 1) -
                                 std::lgamma(static_cast<long double>(n - i) + 1);
        tail += std::exp(log_choose + log_half_n);
    }
    return static_cast<double>(std::min(1.0L, 2.0L * tail));
}

double significance(std::span<const GradedGeneration> baseline, std::span<const GradedGeneration> candidate) {
    if (baseline.size() != candidate.size())
        throw Error(fmt::format("paired gradings differ in length ({} vs {})", baseline.size(), candidate.size()));
    size_t b = 0, c = 0;
    for (size_t i = 0; i < baseline.size(); ++i) {
        if (baseline[i].problem_id != candidate[i].problem_id)
            throw Error(fmt::format("paired gradings differ at position {} ('{}' vs '{}')", i,
                                    baseline[i].problem_id, candidate[i].problem_id));
        if (baseline[i].score == 1 && candidate[i].score == 0) ++b;
        if (baseline[i].score == 0 && candidate[i].score == 1) ++c;
    }
    return mcnemar_exact_p(b, c);
}

} // namespace undo::grade
