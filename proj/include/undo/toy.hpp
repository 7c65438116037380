// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

// Desk-scale stand-ins for the teacher, the student and the trainer. The
// toy world is a small arithmetic corpus built from eight question skills.
// Four are easy: the teacher always writes a rationale whose method
// transfers to new numbers. Four are hard: unless the prompt shows that the
// student is failing that skill, the teacher writes a rationale that only
// restates the answer, which passes the answer filter but teaches nothing
// that transfers.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "undo/backends.hpp"
#include "undo/corpus.hpp"
#include "undo/expression.hpp"

namespace undo::toy {

struct Skill {
    std::string name;
    /// Question text with {a}, {b}, {c} slots.
    std::string question_template;
    /// Arithmetic over the same slots.
    std::string method;
    bool hard = false;
};

const std::vector<Skill>& skills();

/// Question with every run of digits replaced by a single '#'.
std::string signature(std::string_view question);

/// Integer literals of the question, in order.
std::vector<int64_t> numbers_in(std::string_view question);

/// Substitutes {a}, {b}, {c}... with `numbers`; nullopt when a slot has no
/// number.
std::optional<std::string> instantiate(std::string_view method, std::span<const int64_t> numbers);

/// Index into skills() of the skill whose template produced `question`.
std::optional<size_t> classify(std::string_view question);

/// 40 problems: five per skill, ids "toy-<skill>-<i>".
std::vector<corpus::Problem> make_corpus();

/// 24 fresh problems (three per skill) tagged with suite "toy_arith".
corpus::TestSuite make_test_suite();

std::string transferable_rationale(std::string_view question, size_t skill);
std::string answer_only_rationale(std::string_view question, size_t skill);

/// The question a teacher prompt asks about: the body of the last
/// "### question:" block, or for a plain student-style prompt the text after
/// the last "Question:".
std::string teacher_target_question(std::string_view prompt);

/// The question a student-style prompt asks about: the text after the last
/// "Question: " up to the following "\nAnswer:".
std::string student_target_question(std::string_view prompt);

/// One scored block of a validation example inside a teacher prompt.
struct ScoredBlock {
    std::string question;
    int iteration = 1;
    int score = 0;
};

/// Reads the validation examples section of a teacher prompt. Blocks without
/// an ITERATION header count as iteration 1.
std::vector<ScoredBlock> parse_scored_blocks(std::string_view prompt);

struct ScriptedTeacherOptions {
    /// Hard skills repaired per past iteration, chosen in skill order among
    /// those whose validation questions scored 0 in that iteration.
    size_t fixes_per_round = 2;
    /// When false the teacher ignores the validation history.
    bool gap_aware = true;
    /// Questions answered verbatim from this table before any other rule.
    std::map<std::string, std::string> table;
};

class ScriptedTeacher : public backends::Generator {
public:
    explicit ScriptedTeacher(ScriptedTeacherOptions options = {});
    std::string generate(const std::string& prompt, const backends::GenerationParams& params) override;

    /// Hard skills the teacher writes transferable rationales for, given the
    /// history in `prompt`.
    std::set<size_t> repaired_skills(std::string_view prompt) const;

private:
    ScriptedTeacherOptions options_;
};

/// Wraps a teacher and corrupts the final answer of a deterministic fraction
/// of its completions (decided per prompt by hashing it with `seed`).
class NoisyTeacher : public backends::Generator {
public:
    NoisyTeacher(std::shared_ptr<backends::Generator> inner, double rate, uint64_t seed);
    std::string generate(const std::string& prompt, const backends::GenerationParams& params) override;
    bool corrupts(const std::string& prompt) const;

private:
    std::shared_ptr<backends::Generator> inner_;
    double rate_;
    uint64_t seed_;
};

/// Count-based memorizing student. Each training pair is stored twice: under
/// its exact question, and under the question's signature keyed by the
/// rationale's "Method:" line. Every epoch first halves the weights of the
/// buckets it touches, then adds 1 per pair, so recent data dominates.
class ToyStudentModel {
public:
    struct Entry {
        std::string text;
        double weight = 0.0;
        uint64_t stamp = 0;
    };

    static constexpr std::string_view kFallback = "I am not sure how to solve this.";

    ToyStudentModel trained(std::span<const backends::TrainingRecord> records, int epochs) const;

    /// Answer to the question in a student-style prompt.
    std::string generate(std::string_view prompt) const;
    std::string answer(std::string_view question) const;

    nlohmann::json to_json() const;
    static ToyStudentModel from_json(const nlohmann::json& j);

    bool empty() const { return exact_.empty(); }

private:
    std::map<std::string, std::vector<Entry>> exact_;
    std::map<std::string, std::vector<Entry>> methods_;
    uint64_t clock_ = 0;
};

class ToyStudent : public backends::Generator {
public:
    explicit ToyStudent(std::shared_ptr<const ToyStudentModel> model) : model_(std::move(model)) {}
    std::string generate(const std::string& prompt, const backends::GenerationParams& params) override;

private:
    std::shared_ptr<const ToyStudentModel> model_;
};

/// In-process trainer. Checkpoints are stored as <dir>/<id>.json with a
/// content-derived id, so the same base, data and epochs give the same id.
/// The id "base" names the untrained student.
class ToyTrainer : public backends::Trainer {
public:
    explicit ToyTrainer(std::filesystem::path checkpoint_dir);
    backends::CheckpointHandle fine_tune(const backends::FineTuneJob& job) override;
    std::shared_ptr<const ToyStudentModel> load(const backends::CheckpointHandle& checkpoint) const;

    /// Jobs seen so far, for tests.
    size_t jobs() const { return jobs_; }

private:
    std::filesystem::path dir_;
    size_t jobs_ = 0;
};

} // namespace undo::toy
