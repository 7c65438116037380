// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "undo/util.hpp"

namespace undo::corpus {

enum class AnswerKind { numeric, latex_numeric, multiple_choice, boolean };

std::string_view to_string(AnswerKind kind);
AnswerKind answer_kind_from_string(std::string_view s);

/// One (question, gold answer) pair. Multiple-choice options live in
/// metadata under "choice.A" ... "choice.J".
struct Problem {
    std::string id;
    std::string question;
    std::string gold_answer;
    std::string suite = "train";
    std::map<std::string, std::string> metadata;

    bool operator==(const Problem&) const = default;
};

class CorpusError : public Error {
public:
    CorpusError(size_t line, const std::string& what);
    /// 1-based line number, 0 when the error is not tied to a line.
    size_t line() const { return line_; }

private:
    size_t line_;
};

/// Parses corpus JSONL. Blank lines are skipped but still counted, so error
/// line numbers match what an editor shows.
std::vector<Problem> parse_corpus(std::string_view text);
std::vector<Problem> load_corpus(const std::filesystem::path& path);

/// One JSONL record with a fixed key order; unknown metadata keys follow the
/// known ones in sorted order.
std::string serialize_problem(const Problem& problem);
std::string serialize_corpus(std::span<const Problem> problems);

struct PreprocessRules {
    /// When set, only problems whose "question_type" metadata equals this
    /// value are kept.
    std::optional<std::string> required_question_type = "math-word-problem";
    /// Compared case-insensitively against the trimmed gold answer. The empty
    /// answer is always rejected.
    std::vector<std::string> rejected_answers{"proof", "notfound"};
};

struct PreprocessResult {
    std::vector<Problem> problems;
    /// Drop reason -> count. Reasons: "question_type", "empty_question",
    /// "empty", or the rejected answer token itself ("proof", "notfound").
    std::map<std::string, size_t> dropped;
};

PreprocessResult preprocess(std::span<const Problem> problems, const PreprocessRules& rules = {});

struct CorpusSplit {
    std::vector<Problem> train;
    std::vector<Problem> validation;
    uint64_t seed = 0;
};

/// Draws `m` validation problems without replacement. The draw is a partial
/// Fisher-Yates shuffle of the input indices driven by std::mt19937_64 (whose
/// output sequence is fixed by the standard) with rejection sampling for
/// bounded integers, so splits reproduce on every platform. Validation keeps
/// the input order of the drawn problems; train is the remainder in input
/// order.
CorpusSplit split_validation(std::span<const Problem> problems, size_t m, uint64_t seed);

struct FewShotExample {
    std::string question;
    std::string rationale;
};

struct SuiteInfo {
    std::string name;
    AnswerKind kind;
    size_t expected_size;
    size_t few_shot_k;
};

/// Known evaluation suites. Sizes are what the public test splits contain;
/// a mismatch on load is only a warning.
const std::vector<SuiteInfo>& suite_registry();
const SuiteInfo& suite_info(std::string_view name);

struct TestSuite {
    std::string name;
    std::vector<Problem> problems;
    size_t size = 0;
    size_t few_shot_k = 0;
    AnswerKind answer_kind = AnswerKind::numeric;
    std::vector<FewShotExample> few_shot;
    std::vector<std::string> warnings;
};

/// Few-shot files are JSONL with {"question", "rationale"} records.
std::vector<FewShotExample> load_few_shot(const std::filesystem::path& path);

TestSuite load_test_suite(const std::filesystem::path& path, std::string_view name,
                          const std::optional<std::filesystem::path>& few_shot_path = std::nullopt);

} // namespace undo::corpus
