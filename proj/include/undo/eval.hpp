// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "undo/backends.hpp"
#include "undo/corpus.hpp"
#include "undo/grade.hpp"
#include "undo/prompts.hpp"

namespace undo::eval {

struct SuiteEvaluation {
    grade::SuiteMetrics metrics;
    std::vector<grade::GradedGeneration> graded;
    /// Problems whose generation raised an error; they are scored 0.
    size_t failures = 0;
};

/// One maj@1 pass over a suite: one generation per problem through the
/// student prompt, with the suite's few-shot exemplars. Needs at least
/// `few_shot_k` exemplars loaded.
SuiteEvaluation evaluate_suite(backends::Generator& student, const corpus::TestSuite& suite,
                               const prompts::TemplateSet& templates, std::string_view instruction,
                               const backends::GenerationParams& params, size_t parallelism = 1);

/// Accuracy in percent rounded to two decimals, as printed in a table cell.
double percent_cell(double accuracy);

using IterationMetrics = std::map<std::string, grade::SuiteMetrics>;
using IterationGradings = std::map<std::string, std::vector<grade::GradedGeneration>>;

struct IterationReport {
    std::string model_label;
    /// Column order.
    std::vector<std::string> suites;
    /// Row names; defaults to "1", "2", ...
    std::vector<std::string> row_labels;
    std::vector<IterationMetrics> per_iteration;
    /// Size-weighted averages as fractions, one per row.
    std::vector<double> averages;
    /// (row index from 0, suite) -> gain in percentage points over the
    /// baseline row, computed from the two-decimal cells.
    std::map<std::pair<size_t, std::string>, double> gains_vs_baseline;
    /// Same for the Average column.
    std::vector<double> average_gains;
    /// (row index, suite) -> exact McNemar p-value against the baseline row,
    /// present when per-item gradings were supplied.
    std::map<std::pair<size_t, std::string>, double> significance_marks;
    size_t baseline_row = 0;
};

/// Throws when rows cover different suites or gradings do not line up.
IterationReport build_report(std::string model_label, std::vector<IterationMetrics> per_iteration,
                             const std::vector<IterationGradings>* gradings = nullptr, size_t baseline_row = 0,
                             std::vector<std::string> row_labels = {});

enum class Format { text, csv, markdown };
Format format_from_string(std::string_view s);

/// Display name for a suite column ("gsm8k" -> "GSM8K").
std::string suite_title(std::string_view suite);

/// Rows are iterations; columns the suites plus Average. Cells after the
/// baseline carry "(↑+x.xx)" or "(↓-x.xx)"; a trailing '*' marks p < 0.05.
std::string render_table(const IterationReport& report, Format format);

/// One row of an out-of-domain comparison, accuracies in percent.
struct OodEntry {
    std::string model;
    std::string suite;
    double standard = 0.0;
    double undo = 0.0;
};

/// Two columns (Standard Dist., UNDO) per suite, one row per model.
std::string render_ood_table(std::span<const OodEntry> entries, Format format);

/// CSV "model,suite,iteration,accuracy" with accuracy in percent; no rows for
/// the Average column.
std::string plot_series_csv(std::span<const IterationReport> reports);
std::filesystem::path emit_plot_series(std::span<const IterationReport> reports, const std::filesystem::path& out);

/// Fixture mode: reports from a JSON document
/// {"reports": [{"model": ..., "rows": [...]?, "iterations": [{suite: {"n": N, "percent": P} |
/// {"n": N, "correct": C}}...]}], "ood": [{"model","suite","standard","undo"}]}.
struct Fixture {
    std::vector<IterationReport> reports;
    std::vector<OodEntry> ood;
};
Fixture load_fixture(const nlohmann::json& j);
Fixture load_fixture(const std::filesystem::path& path);

nlohmann::json to_json(const IterationReport& report);

} // namespace undo::eval
