// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "undo/corpus.hpp"

namespace undo::prompts {

/// Values for a template render. Sections hold a list of child contexts;
/// children see their parents' values unless they shadow them.
struct TemplateContext {
    std::map<std::string, std::string> values;
    std::map<std::string, std::vector<TemplateContext>> sections;
};

/// Renders a mustache-style template: `{{name}}` substitutes a value,
/// `{{#list}}...{{/list}}` repeats for each child context and
/// `{{^list}}...{{/list}}` renders when the list is empty or absent. A section
/// tag alone on its line removes that whole line. Unbound values throw.
std::string render(std::string_view tmpl, const TemplateContext& ctx);

/// The four prompt templates, read from a directory holding
/// teacher_iter1.tmpl, teacher_iterk.tmpl, student_train.tmpl and
/// student_eval.tmpl.
struct TemplateSet {
    std::string teacher_iter1;
    std::string teacher_iterk;
    std::string student_train;
    std::string student_eval;

    static TemplateSet load(const std::filesystem::path& dir);
    /// Templates shipped with the repository.
    static TemplateSet shipped();
    /// File name -> sha256 of contents, for the run manifest.
    std::map<std::string, std::string> digests() const;
};

std::filesystem::path shipped_template_dir();

/// Default chain-of-thought instruction given to the student.
inline constexpr std::string_view kDefaultInstruction =
    "Solve the following math problem step by step. Put the final result inside \\boxed{} and end with a line "
    "\"Final Answer: <answer>\".";

/// One scored round for one validation problem. The block for iteration j
/// holds the teacher rationale of round j, the generation of the student
/// trained in round j, and that generation's score.
struct ValidationHistoryEntry {
    int iteration = 1;
    std::string teacher_answer;
    std::string student_answer;
    int score = 0;

    bool operator==(const ValidationHistoryEntry&) const = default;
};

struct ValidationExample {
    corpus::Problem problem;
    std::vector<ValidationHistoryEntry> history;
};

struct InitialExemplar {
    corpus::Problem problem;
    std::string teacher_answer;
    std::string student_answer;
    int score = 0;
};

/// What the teacher sees when regenerating the rationale for one question.
struct GapContext {
    std::string question;
    std::optional<std::string> prev_student;
    std::optional<std::string> prev_teacher;
    std::vector<ValidationExample> validation_examples;
};

std::string build_initial_teacher_prompt(const TemplateSet& templates, std::string_view question,
                                         std::string_view instruction, std::span<const InitialExemplar> exemplars);

/// Throws when a validation history is empty or its iteration numbers are
/// not consecutive.
std::string build_gap_prompt(const TemplateSet& templates, const GapContext& ctx, std::string_view instruction);

std::string build_student_prompt(const TemplateSet& templates, std::string_view question,
                                 std::string_view instruction, std::span<const corpus::FewShotExample> few_shot);

/// Full training text (prompt plus rationale) as the trainer should see it.
std::string build_training_text(const TemplateSet& templates, std::string_view question,
                                std::string_view instruction, std::string_view rationale);

/// ceil(code points / chars_per_token).
size_t estimate_tokens(std::string_view text, double chars_per_token = 4.0);

struct BudgetCheck {
    bool ok = true;
    size_t estimate = 0;
    size_t exceeded_by = 0;
};

BudgetCheck check_budget(std::string_view prompt, size_t budget, double chars_per_token = 4.0);

class BudgetExceeded : public Error {
public:
    BudgetExceeded(size_t estimate, size_t budget);
    size_t estimate() const { return estimate_; }
    size_t budget() const { return budget_; }
    size_t exceeded_by() const { return estimate_ - budget_; }

private:
    size_t estimate_;
    size_t budget_;
};

struct FittedPrompt {
    std::string prompt;
    /// Oldest iterations removed to fit; 0 when nothing was pruned.
    int pruned_iterations = 0;
};

/// Renders the gap prompt and enforces the budget. Without pruning an
/// overflow throws BudgetExceeded. With pruning, whole oldest-iteration
/// blocks are dropped from every validation example (never partial blocks)
/// until the prompt fits; if only the latest iteration is left and it still
/// overflows, BudgetExceeded is thrown.
FittedPrompt fit_gap_prompt(const TemplateSet& templates, GapContext ctx, std::string_view instruction,
                            size_t budget, bool prune_oldest, double chars_per_token = 4.0);

/// Strips a leading "### new_answer" header from a teacher completion.
std::string strip_new_answer_header(std::string_view completion);

} // namespace undo::prompts
