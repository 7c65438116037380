// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "undo/backends.hpp"
#include "undo/config.hpp"
#include "undo/corpus.hpp"
#include "undo/grade.hpp"
#include "undo/prompts.hpp"

namespace undo::loop {

/// The three services a run talks to. The student factory maps a checkpoint
/// to a generator serving it.
struct Backends {
    std::shared_ptr<backends::Generator> teacher;
    std::function<std::shared_ptr<backends::Generator>(const backends::CheckpointHandle&)> student;
    std::shared_ptr<backends::Trainer> trainer;
};

/// Builds backends from the configuration. Toy checkpoints live under
/// <run_dir>/checkpoints.
Backends make_backends(const config::RunConfig& config, const std::filesystem::path& run_dir);

struct ConvergenceDecision {
    bool stop = false;
    /// 1-based index of the best accuracy, earliest on ties.
    int best_k = 1;
    /// "saturated", "k_max" or empty when continuing.
    std::string reason;
};

/// Stops when the last `patience` accuracies all fail to beat the best one
/// before them, or when the history has K_max entries.
ConvergenceDecision check_convergence(std::span<const double> history, int patience, int K_max);

struct IterationState {
    int k = 0;
    backends::CheckpointHandle checkpoint;
    std::filesystem::path teacher_dataset_path;
    size_t retained = 0;
    size_t discarded = 0;
    /// Validation problem id -> entries for iterations 1..k.
    std::map<std::string, std::vector<prompts::ValidationHistoryEntry>> validation_history;
    std::map<std::string, grade::SuiteMetrics> metrics;
    double validation_accuracy = 0.0;
    /// Seconds, from timing.json; not part of the manifest.
    double wall_clock = 0.0;
};

struct RunOptions {
    /// Stop (as if killed) once this many rounds in total are complete.
    std::optional<int> max_rounds;
};

struct RunResult {
    std::vector<IterationState> rounds;
    bool complete = false;
    int best_k = 0;
    std::string stop_reason;
};

/// Thrown when a round fails; the round directory holds a FAILED marker and
/// the manifest names the failed step.
class RoundFailed : public Error {
public:
    RoundFailed(int k, std::string step, const std::string& cause);
    int k() const { return k_; }
    const std::string& step() const { return step_; }

private:
    int k_;
    std::string step_;
};

/// Creates `run_dir` (which must not hold a manifest yet), persists the split
/// and runs rounds until convergence, K_max or options.max_rounds.
RunResult start_run(const config::LoadedConfig& config, const corpus::CorpusSplit& split,
                    const std::filesystem::path& run_dir, const Backends* backends = nullptr, RunOptions options = {});

/// Continues a run from its manifest, re-running only steps whose outputs
/// were not recorded. Verifies every recorded artifact digest first.
RunResult resume_run(const std::filesystem::path& run_dir, const Backends* backends = nullptr, RunOptions options = {});

struct RunStatus {
    config::LoadedConfig config;
    /// Last round whose every step is persisted.
    std::optional<IterationState> latest;
    /// "running", "failed" or "complete".
    std::string status;
    int best_k = 0;
};

/// Reads and verifies a run directory without running anything.
RunStatus inspect_run(const std::filesystem::path& run_dir);

/// Copies the teacher dataset of the best round to `out`.
std::filesystem::path export_final_dataset(const std::filesystem::path& run_dir, const std::filesystem::path& out);

/// The same run as standard distillation: one round of `total_epochs`
/// epochs, named "<name>-baseline".
config::LoadedConfig equal_epoch_baseline(const config::LoadedConfig& config, int total_epochs);

/// Test suites a run evaluates: the configured ones plus the toy suite when
/// the student is a toy student and toy.test_suite is set.
std::vector<corpus::TestSuite> configured_test_suites(const config::RunConfig& config);

prompts::TemplateSet configured_templates(const config::RunConfig& config);

/// Teacher prompt for one question at round k. Round 1 is the plain student
/// prompt; later rounds render the gap prompt with history 1..k-1.
prompts::FittedPrompt teacher_prompt(const prompts::TemplateSet& templates, const config::RunConfig& config, int k,
                                     const prompts::GapContext& gap);

} // namespace undo::loop
