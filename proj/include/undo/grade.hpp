// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "undo/corpus.hpp"
#include "undo/expression.hpp"

namespace undo::grade {

struct Real {
    double value = 0.0;
    bool operator==(const Real&) const = default;
};
struct Choice {
    char letter = 'A';
    bool operator==(const Choice&) const = default;
};
struct Boolean {
    bool value = false;
    bool operator==(const Boolean&) const = default;
};
struct Text {
    std::string value;
    bool operator==(const Text&) const = default;
};

/// Canonical form of an answer. monostate means "no answer".
using Canonical = std::variant<std::monostate, Rational, Real, Choice, Boolean, Text>;

std::string canonical_string(const Canonical& c);
bool is_empty(const Canonical& c);

/// Canonicalizes a raw answer string. Strips `$`, `\left`, `\right`, a
/// surrounding `\boxed{}`, trailing periods, percent and degree marks, and
/// thousands separators; then tries yes/no/true/false, a lone choice letter
/// A-J, and arithmetic evaluation, falling back to whitespace-collapsed text.
Canonical normalize_answer(std::string_view raw);

enum class ExtractionSource { boxed, final_answer_line, last_number, none };
std::string_view to_string(ExtractionSource s);
ExtractionSource extraction_source_from_string(std::string_view s);

struct ExtractedAnswer {
    std::string raw;
    Canonical canonical;
    ExtractionSource source = ExtractionSource::none;
};

/// Tries, in order: the last balanced `\boxed{...}`, the text after the last
/// "Final Answer:" marker, the last numeric literal. A candidate whose
/// canonical form is empty is skipped.
ExtractedAnswer extract_final_answer(std::string_view rationale);

/// Content of the last balanced `\boxed{...}` (or `\fbox{...}`) in `text`, if any.
std::optional<std::string> last_boxed(std::string_view text);

/// Compares canonical forms: rationals exactly, reals with relative
/// tolerance 1e-6 (absolute 1e-9 near zero), letters/booleans/text exactly.
/// When one side is a choice letter and `choices` (problem metadata with
/// "choice.X" keys) is given, the option text is compared instead.
bool answers_match(const Canonical& a, const Canonical& b,
                   const std::map<std::string, std::string>* choices = nullptr);

/// 1 iff the extracted answer matches `gold`. Throws std::invalid_argument on
/// an empty gold answer.
int score(const ExtractedAnswer& extracted, std::string_view gold, corpus::AnswerKind kind,
          const std::map<std::string, std::string>* choices = nullptr);

struct GradedGeneration {
    std::string problem_id;
    std::string generation;
    ExtractedAnswer extracted;
    int score = 0;
};

nlohmann::json to_json(const GradedGeneration& g);
GradedGeneration graded_from_json(const nlohmann::json& j);
std::vector<GradedGeneration> load_graded(const std::filesystem::path& path);
std::string serialize_graded(std::span<const GradedGeneration> graded);

GradedGeneration grade_one(const corpus::Problem& problem, std::string generation, corpus::AnswerKind kind);

/// Grades (problem_id, text) pairs; order preserved. Throws on an unknown id.
std::vector<GradedGeneration> grade_batch(std::span<const std::pair<std::string, std::string>> generations,
                                          const std::map<std::string, corpus::Problem>& problems,
                                          corpus::AnswerKind kind);

struct SuiteMetrics {
    std::string suite;
    size_t n = 0;
    size_t correct = 0;
    double accuracy = 0.0;
    /// True when `accuracy` was copied from an external report rather than
    /// measured; `correct` is then the nearest count and may disagree with it.
    bool reported = false;

    static SuiteMetrics from_counts(std::string suite, size_t n, size_t correct);
    static SuiteMetrics from_reported(std::string suite, size_t n, double accuracy);
};

nlohmann::json to_json(const SuiteMetrics& m);
SuiteMetrics metrics_from_json(const nlohmann::json& j);

/// maj@1: one generation per problem, accuracy = correct / n.
SuiteMetrics accuracy(std::span<const GradedGeneration> graded, std::string suite);

/// Size-weighted (micro) average of per-suite accuracies.
double weighted_average(std::span<const SuiteMetrics> per_suite);

/// Two-sided exact McNemar test on paired correctness. With b = baseline-only
/// correct and c = candidate-only correct, p = min(1, 2 * P[X <= min(b, c)])
/// for X ~ Binomial(b + c, 1/2); p = 1 when b + c = 0.
double significance(std::span<const GradedGeneration> baseline, std::span<const GradedGeneration> candidate);

/// The binomial tail used by `significance`, exposed for testing.
double mcnemar_exact_p(size_t b, size_t c);

} // namespace undo::grade
