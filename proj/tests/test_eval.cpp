// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "undo/eval.hpp"
#include "undo/toy.hpp"

using namespace undo;
using namespace undo::eval;
using nlohmann::json;

namespace {

const json& paper() {
    static const json j = test::load_json("fixtures/paper_tables.json");
    return j;
}

const IterationReport& report(size_t i) {
    static const Fixture f = load_fixture(paper());
    return f.reports.at(i);
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

// Weighted mean computed directly from the fixture's percent cells.
double oracle_average(const json& row) {
    double num = 0.0, den = 0.0;
    for (const auto& [suite, cell] : row.items()) {
        num += cell.at("n").get<double>() * cell.at("percent").get<double>();
        den += cell.at("n").get<double>();
    }
    return num / den;
}

class AnswerKey : public backends::Generator {
public:
    std::string generate(const std::string& prompt, const backends::GenerationParams&) override {
        auto q = toy::student_target_question(prompt);
        auto skill = toy::classify(q);
        if (!skill) throw backends::BackendError("no skill");
        return toy::transferable_rationale(q, *skill);
    }
};

} // namespace

TEST_CASE("fixture averages agree with a direct weighted mean") {
    const auto& reports = paper().at("reports");
    for (size_t r = 0; r < reports.size(); ++r) {
        const auto& rows = reports[r].at("iterations");
        for (size_t i = 0; i < rows.size(); ++i) {
            CHECK(report(r).averages[i] * 100.0 == doctest::Approx(oracle_average(rows[i])).epsilon(1e-12));
        }
    }
}

TEST_CASE("Qwen Table 2 averages match the printed values") {
    const auto& printed = paper().at("reports")[0].at("printed").at("average");
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(report(0).averages[i] * 100.0 - printed[i].get<double>()) <= 0.01);
}

TEST_CASE("per-suite gain cells match the printed tables") {
    const auto& reports = paper().at("reports");
    size_t checked = 0;
    for (size_t r = 0; r < reports.size(); ++r) {
        for (const auto& [suite, gains] : reports[r].at("printed").at("gains").items()) {
            for (size_t i = 1; i < gains.size(); ++i) {
                CAPTURE(r);
                CAPTURE(suite);
                CAPTURE(i);
                CHECK(report(r).gains_vs_baseline.at({i, suite}) == doctest::Approx(gains[i].get<double>()).epsilon(1e-9));
                ++checked;
            }
        }
    }
    CHECK(checked == 40);
    CHECK(report(2).gains_vs_baseline.at({1, "svamp"}) == doctest::Approx(-1.00));
}

TEST_CASE("the Average gain is the difference of the rounded averages") {
    for (size_t r = 0; r < 5; ++r) {
        const auto& rep = report(r);
        for (size_t i = 0; i < rep.averages.size(); ++i) {
            CHECK(rep.average_gains[i] ==
                  doctest::Approx(round2(rep.averages[i] * 100.0) - round2(rep.averages[0] * 100.0)).epsilon(1e-9));
        }
    }
}

TEST_CASE("gains are antisymmetric when the baseline row changes") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<size_t> correct(0, 500);
    for (int t = 0; t < 50; ++t) {
        std::vector<IterationMetrics> rows(2);
        for (auto& row : rows) {
            for (const char* s : {"a", "b", "c"}) row[s] = grade::SuiteMetrics::from_counts(s, 500, correct(rng));
        }
        auto forward = build_report("m", rows, nullptr, 0);
        auto backward = build_report("m", rows, nullptr, 1);
        for (const char* s : {"a", "b", "c"}) {
            CHECK(forward.gains_vs_baseline.at({1, s}) == doctest::Approx(-backward.gains_vs_baseline.at({0, s})));
        }
        CHECK(forward.average_gains[1] == doctest::Approx(-backward.average_gains[0]));
        CHECK(forward.gains_vs_baseline.at({0, "a"}) == 0.0);
    }
}

TEST_CASE("reports reject mismatched rows") {
    std::vector<IterationMetrics> rows(2);
    rows[0]["a"] = grade::SuiteMetrics::from_counts("a", 10, 5);
    rows[1]["b"] = grade::SuiteMetrics::from_counts("b", 10, 5);
    CHECK_THROWS_AS(build_report("m", rows), Error);
    CHECK_THROWS_AS(build_report("m", {}), Error);
}

TEST_CASE("significance marks use paired gradings") {
    std::vector<IterationMetrics> rows(2);
    std::vector<IterationGradings> gradings(2);
    for (int i = 0; i < 10; ++i) {
        for (size_t r = 0; r < 2; ++r) {
            grade::GradedGeneration g;
            g.problem_id = std::to_string(i);
            g.score = r == 1 ? 1 : (i < 2 ? 1 : 0);
            gradings[r]["s"].push_back(g);
        }
    }
    rows[0]["s"] = grade::accuracy(gradings[0]["s"], "s");
    rows[1]["s"] = grade::accuracy(gradings[1]["s"], "s");
    auto rep = build_report("m", rows, &gradings);
    CHECK(rep.significance_marks.at({1, "s"}) == doctest::Approx(0.0078125));
    auto text = render_table(rep, Format::text);
    CHECK(text.find("100.00 (↑+80.00)*") != std::string::npos);
}

TEST_CASE("csv and markdown renderings") {
    const auto& rep = report(0);
    auto csv = render_table(rep, Format::csv);
    auto lines = split_lines(csv);
    CHECK(lines.size() == 4);
    CHECK(lines[0].starts_with("model,iteration,gsm8k,gsm8k_gain"));
    CHECK(lines[3] == "Qwen,3,55.04,4.09,,39.00,6.20,,15.17,0.66,,87.40,10.70,,47.96,4.82");

    auto md = render_table(rep, Format::markdown);
    CHECK(md.starts_with("| Model | Iter. | GSM8K | MATH | MMLU PRO | SVAMP | Average |"));
    CHECK(md.find("87.40 (↑+10.70)") != std::string::npos);

    auto txt = render_table(report(2), Format::text);
    CHECK(txt.find("78.50 (↓-1.00)") != std::string::npos);
    CHECK(format_from_string("markdown") == Format::markdown);
    CHECK_THROWS(format_from_string("html"));
    CHECK(suite_title("gsm8k") == "GSM8K");
}

TEST_CASE("row labels from the fixture") {
    CHECK(report(3).row_labels == std::vector<std::string>{"Baseline", "Qwen", "SmolLM2"});
    CHECK(render_table(report(3), Format::text).find("Baseline") != std::string::npos);
    CHECK(report(0).row_labels == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("out-of-domain table") {
    auto f = load_fixture(paper());
    REQUIRE(f.ood.size() == 4);
    for (const auto& e : paper().at("ood")) {
        CHECK(round2(e.at("undo").get<double>() - e.at("standard").get<double>()) ==
              doctest::Approx(round2(e.at("printed_gain").get<double>())));
    }
    auto md = render_ood_table(f.ood, Format::markdown);
    CHECK(md.find("15.00% (↑+2.50)") != std::string::npos);
    CHECK(md.find("Theorem QA UNDO") != std::string::npos);
}

TEST_CASE("plot series") {
    auto f = load_fixture(paper());
    auto csv = plot_series_csv(f.reports);
    auto lines = split_lines(csv);
    CHECK(lines[0] == "model,suite,iteration,accuracy");
    CHECK(lines.size() == 1 + 5 * 3 * 4);
    std::vector<IterationReport> none;
    CHECK(plot_series_csv(none) == "model,suite,iteration,accuracy\n");

    std::vector<IterationReport> table2(f.reports.begin(), f.reports.begin() + 3);
    CHECK(split_lines(plot_series_csv(table2)).size() == 1 + 36);
    test::TempDir dir("plot");
    auto out = emit_plot_series(table2, dir / "series.csv");
    CHECK(read_file(out) == plot_series_csv(table2));
}

TEST_CASE("percent cells") {
    CHECK(percent_cell(672.0 / 1319.0) == doctest::Approx(50.95));
    CHECK(percent_cell(1.0) == 100.0);
    CHECK(percent_cell(0.0) == 0.0);
}

TEST_CASE("evaluating a suite grades one generation per problem") {
    auto suite = toy::make_test_suite();
    AnswerKey key;
    auto eval = evaluate_suite(key, suite, prompts::TemplateSet::shipped(), prompts::kDefaultInstruction, {}, 3);
    CHECK(eval.graded.size() == suite.problems.size());
    CHECK(eval.metrics.accuracy == 1.0);
    CHECK(eval.failures == 0);
    for (size_t i = 0; i < suite.problems.size(); ++i) CHECK(eval.graded[i].problem_id == suite.problems[i].id);

    auto short_suite = suite;
    short_suite.few_shot_k = 2;
    CHECK_THROWS_AS(
        evaluate_suite(key, short_suite, prompts::TemplateSet::shipped(), prompts::kDefaultInstruction, {}, 1), Error);
}

TEST_CASE("report JSON") {
    auto j = to_json(report(0));
    CHECK(j.at("model") == "Qwen");
    CHECK(j.dump().find("gsm8k") != std::string::npos);
}
