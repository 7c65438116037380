// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "support.hpp"
#include "undo/eval.hpp"
#include "undo/grade.hpp"
#include "undo/loop.hpp"
#include "undo/prompts.hpp"
#include "undo/sim.hpp"
#include "undo/toy.hpp"

using namespace undo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double round2(double x) { return std::round(x * 100.0) / 100.0; }

const json& paper() {
    static const json j = test::load_json("fixtures/paper_tables.json");
    return j;
}

const json* table2(const std::string& model) {
    for (const auto& r : paper().at("reports"))
        if (r.at("model") == model && r.at("table") == "table2") return &r;
    return nullptr;
}

config::LoadedConfig toy_config(std::vector<std::string> extra = {}) {
    std::vector<std::string> o = {"m=8", "K_max=4", "epochs_schedule=[5,3,3,3]", "name=toy", "seed=0"};
    o.insert(o.end(), extra.begin(), extra.end());
    return config::resolve_config(json::object(), o);
}

corpus::CorpusSplit toy_split(const config::RunConfig& c) {
    return corpus::split_validation(toy::make_corpus(), c.m, c.seed);
}

// Weighted averages from the printed cells against the printed Average.
Verdict criterion1() {
    struct Row {
        std::string model;
        std::vector<double> printed;
        double tol;
    };
    const std::vector<Row> rows = {{"Qwen", {43.14, 46.31, 47.96}, 0.01},
                                   {"SmolLM", {45.49, 47.51, 48.70}, 0.01},
                                   {"Llama", {35.59, 38.27, 40.95}, 0.1}};
    size_t ok = 0, total = 0;
    std::string misses;
    for (const auto& row : rows) {
        const auto& its = table2(row.model)->at("iterations");
        for (size_t i = 0; i < row.printed.size(); ++i) {
            std::vector<grade::SuiteMetrics> cells;
            for (const auto& [suite, cell] : its[i].items())
                cells.push_back(grade::SuiteMetrics::from_reported(suite, cell.at("n"), cell.at("percent").get<double>() / 100.0));
            double avg = grade::weighted_average(cells) * 100.0;
            ++total;
            if (std::abs(avg - row.printed[i]) <= row.tol) {
                ++ok;
            } else {
                misses += fmt::format(" {} iter {}: {:.4f} vs {:.2f} (tol {});", row.model, i + 1, avg, row.printed[i],
                                      row.tol);
            }
        }
    }
    return {ok == total, fmt::format("{}/{} averages within tolerance;{}", ok, total, misses)};
}

Verdict criterion2() {
    const std::string right = "Therefore, the number of smaller bags he finds is 100 / 50 = $\\boxed{2}$ smaller bags.\n"
                              "Final Answer: 2";
    const std::string wrong = "Therefore, Jim found $\\boxed{4}$ smaller bags. Final Answer: \\boxed{4}.";
    int s1 = grade::score(grade::extract_final_answer(right), "2", corpus::AnswerKind::numeric);
    int s0 = grade::score(grade::extract_final_answer(wrong), "2", corpus::AnswerKind::numeric);

    size_t ok = 0, total = 0;
    for (const auto& c : test::load_json("fixtures/normalization.json")) {
        ++total;
        auto canon = grade::normalize_answer(c.at("raw").get<std::string>());
        const std::string kind = c.at("kind");
        bool good = false;
        if (kind == "rational") {
            good = std::holds_alternative<grade::Rational>(canon) &&
                   std::get<grade::Rational>(canon).str() == c.at("value").get<std::string>();
        } else if (kind == "real") {
            double want = c.at("approx");
            std::optional<double> got;
            if (auto* r = std::get_if<grade::Real>(&canon)) got = r->value;
            if (auto* q = std::get_if<grade::Rational>(&canon)) got = q->to_double();
            good = got && std::abs(*got - want) <= 1e-9 * std::max(1.0, std::abs(want));
        } else if (kind == "choice") {
            good = std::holds_alternative<grade::Choice>(canon) &&
                   std::string(1, std::get<grade::Choice>(canon).letter) == c.at("value").get<std::string>();
        } else if (kind == "boolean") {
            good = std::holds_alternative<grade::Boolean>(canon) &&
                   std::get<grade::Boolean>(canon).value == c.at("value").get<bool>();
        } else {
            good = std::holds_alternative<grade::Text>(canon) &&
                   std::get<grade::Text>(canon).value == c.at("value").get<std::string>();
        }
        ok += good;
    }
    bool pass = s1 == 1 && s0 == 0 && total == 50 && ok == total;
    return {pass, fmt::format("appendix scores {} and {}; normalization {}/{}", s1, s0, ok, total)};
}

// Every printed Table 2 gain cell, per suite and for the Average column.
Verdict criterion3() {
    auto fixture = eval::load_fixture(paper());
    size_t ok = 0, total = 0;
    std::string misses;
    const auto& reports = paper().at("reports");
    for (size_t r = 0; r < reports.size(); ++r) {
        if (reports[r].at("table") != "table2") continue;
        const auto& rep = fixture.reports[r];
        const auto& printed = reports[r].at("printed");
        for (const auto& [suite, gains] : printed.at("gains").items()) {
            for (size_t i = 1; i < gains.size(); ++i) {
                ++total;
                double got = round2(rep.gains_vs_baseline.at({i, suite}));
                if (got == round2(gains[i].get<double>())) ++ok;
                else misses += fmt::format(" {} {} iter {}: {:+.2f} vs {:+.2f};", rep.model_label, suite, i + 1, got,
                                           gains[i].get<double>());
            }
        }
        const auto& avg = printed.at("average_gains");
        for (size_t i = 1; i < avg.size(); ++i) {
            ++total;
            double got = round2(rep.average_gains[i]);
            if (got == round2(avg[i].get<double>())) ++ok;
            else misses += fmt::format(" {} Average iter {}: {:+.2f} vs {:+.2f};", rep.model_label, i + 1, got,
                                       avg[i].get<double>());
        }
    }
    return {ok == total, fmt::format("{}/{} gain cells reproduced;{}", ok, total, misses)};
}

Verdict criterion4() {
    bool pass = true;
    std::string detail;
    for (const auto& [model, series] : paper().at("iteration4_gsm8k").items()) {
        auto s = series.get<std::vector<double>>();
        auto early = loop::check_convergence(std::span(s).first(3), 1, 4);
        auto d = loop::check_convergence(s, 1, 4);
        bool good = !early.stop && d.stop && d.best_k == 3 && d.reason == "saturated";
        pass = pass && good;
        detail += fmt::format(" {}: stop after {} (best_k {}, {});", model, s.size(), d.best_k, d.reason);
    }
    return {pass, detail};
}

Verdict criterion5() {
    auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20260101);
    std::uniform_int_distribution<size_t> size(1, 32);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        size_t n = size(rng);
        auto p = sim::random_categorical(n, rng);
        auto q = sim::random_categorical(n, rng);
        worst = std::max(worst, sim::kl_nll_identity_check(p, q));
    }
    auto half = sim::Categorical::make({"a", "b"}, {0.5, 0.5});
    auto skew = sim::Categorical::make({"a", "b"}, {0.25, 0.75});
    auto point = sim::Categorical::make({"a", "b"}, {1.0, 0.0});
    double kl1 = sim::exact_kl(half, skew);
    double kl2 = sim::exact_kl(point, half);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = worst < 1e-12 && std::abs(kl1 - 0.1438) < 1e-4 && std::abs(kl2 - std::log(2.0)) < 1e-4 && secs < 1.0;
    return {pass, fmt::format("max residual {:.2e} over 1000 pairs; KL {:.6f} and {:.6f}; {:.3f} s", worst, kl1, kl2, secs)};
}

Verdict criterion6() {
    std::map<std::string, std::string> gold;
    for (const auto& p : toy::make_corpus()) gold[p.question] = p.gold_answer;
    size_t records = 0, mismatched = 0, discarded = 0, trials_with_data = 0;
    for (int trial = 0; trial < 100; ++trial) {
        test::TempDir dir("accept-noise");
        auto cfg = toy_config({"K_max=2", "toy.noise_rate=0.3", fmt::format("toy.noise_seed={}", trial),
                               fmt::format("seed={}", trial)});
        try {
            loop::start_run(cfg, toy_split(cfg.config), dir / "run");
        } catch (const loop::RoundFailed&) {
        }
        bool any = false;
        for (int k = 1; k <= 2; ++k) {
            auto data = dir / fmt::format("run/iter_{}/teacher_data.jsonl", k);
            if (!fs::exists(data)) continue;
            any = true;
            for (const auto& rec : backends::load_training_data(data)) {
                ++records;
                auto e = grade::extract_final_answer(rec.rationale);
                if (grade::score(e, gold.at(rec.question), corpus::AnswerKind::numeric) != 1) ++mismatched;
            }
            for (const auto& line : split_lines(read_file(dir / fmt::format("run/iter_{}/teacher_records.jsonl", k)))) {
                auto j = json::parse(line);
                if (j.at("split") == "train" && !j.at("retained").get<bool>()) ++discarded;
            }
        }
        trials_with_data += any;
    }
    bool pass = mismatched == 0 && discarded > 0 && trials_with_data == 100;
    return {pass, fmt::format("100 trials, {} retained records, {} answer-mismatched, {} corrupted rationales discarded",
                              records, mismatched, discarded)};
}

Verdict criterion7() {
    auto start = std::chrono::steady_clock::now();
    test::TempDir dir("accept-toy");
    auto cfg = toy_config();
    auto split = toy_split(cfg.config);
    auto undo = loop::start_run(cfg, split, dir / "a");
    loop::start_run(cfg, split, dir / "b");
    bool deterministic = read_file(dir / "a/manifest.json") == read_file(dir / "b/manifest.json");

    std::vector<double> series;
    int total_epochs = 0;
    for (const auto& r : undo.rounds) {
        series.push_back(r.validation_accuracy);
        total_epochs += cfg.config.epochs_for_round(r.k);
    }
    bool monotone = true;
    for (int i = 1; i < undo.best_k; ++i) monotone = monotone && series[i] > series[i - 1];
    for (size_t i = static_cast<size_t>(undo.best_k); i < series.size(); ++i)
        monotone = monotone && series[i] >= series[i - 1] - 1e-12 && series[i] <= series[undo.best_k - 1];
    double best = series[static_cast<size_t>(undo.best_k - 1)];
    double final_acc = series.back();

    auto base_cfg = loop::equal_epoch_baseline(cfg, total_epochs);
    auto base = loop::start_run(base_cfg, split, dir / "baseline");
    double base_acc = base.rounds.back().validation_accuracy;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    bool pass = deterministic && monotone && final_acc >= 0.9 && base_acc < best && secs < 30.0;
    return {pass, fmt::format("validation [{}], best round {} ({}), baseline {} epochs {:.3f}, deterministic {}, {:.2f} s",
                              fmt::join(series, ", "), undo.best_k, undo.stop_reason, total_epochs, base_acc,
                              deterministic, secs)};
}

Verdict criterion8() {
    auto templates = prompts::TemplateSet::shipped();
    auto ex = test::load_json("fixtures/appendix_exemplar.json");
    corpus::Problem jim{"val-jim", ex.at("question"), "2", "gsm8k", {}};
    const auto& it1 = ex.at("iteration1_prompt");
    std::vector<prompts::InitialExemplar> exemplars = {
        {jim, it1.at("teacher_answer"), it1.at("student_answer"), it1.at("score")}};
    const std::string q = "What is 7 + 5?";
    bool g1 = prompts::build_initial_teacher_prompt(templates, q, prompts::kDefaultInstruction, exemplars) ==
              read_file(test::data_dir() / "golden/teacher_iter1.txt");

    std::vector<prompts::ValidationHistoryEntry> history;
    for (const auto& b : ex.at("iteration2_prompt"))
        history.push_back({b.at("iteration"), b.at("teacher_answer"), b.at("student_answer"), b.at("score")});
    prompts::GapContext gap{q, "7 + 5 = 13.\nFinal Answer: 13", "7 + 5 = 12.\nFinal Answer: \\boxed{12}", {{jim, history}}};
    bool g2 = prompts::build_gap_prompt(templates, gap, prompts::kDefaultInstruction) ==
              read_file(test::data_dir() / "golden/teacher_iter2.txt");

    // Three validation examples with three scored rounds each.
    prompts::GapContext multi{q, std::nullopt, std::nullopt, {}};
    for (int v = 0; v < 3; ++v) {
        prompts::ValidationExample e;
        e.problem = {fmt::format("v{}", v), fmt::format("What is {} + 1?", v), std::to_string(v + 1), "toy", {}};
        for (int j = 1; j <= 3; ++j) e.history.push_back({j, "t", "s", 0});
        multi.validation_examples.push_back(e);
    }
    auto count = [](const std::string& s) {
        size_t n = 0;
        for (auto p = s.find("### ITERATION"); p != std::string::npos; p = s.find("### ITERATION", p + 1)) ++n;
        return n;
    };
    config::RunConfig cfg;
    size_t c1 = count(loop::teacher_prompt(templates, cfg, 1, multi).prompt);
    size_t c3 = count(loop::teacher_prompt(templates, cfg, 3, multi).prompt);
    bool blocks = c3 - c1 == 2 * multi.validation_examples.size();

    auto full = prompts::build_gap_prompt(templates, multi, prompts::kDefaultInstruction);
    size_t estimate = (full.size() + 3) / 4;
    size_t budget = 16;
    size_t reported = 0;
    try {
        prompts::fit_gap_prompt(templates, multi, prompts::kDefaultInstruction, budget, false);
    } catch (const prompts::BudgetExceeded& e) {
        reported = e.exceeded_by();
    }
    bool overflow = reported == estimate - budget;
    return {g1 && g2 && blocks && overflow,
            fmt::format("golden iter1 {}, golden iter2 {}; ITERATION blocks k=1 {} k=3 {} ({} examples); overflow {} "
                        "(expected {})",
                        g1 ? "identical" : "differs", g2 ? "identical" : "differs", c1, c3,
                        multi.validation_examples.size(), reported, estimate - budget)};
}

Verdict criterion9() {
    auto start = std::chrono::steady_clock::now();
    test::TempDir dir("accept-resume");
    auto cfg = toy_config();
    auto split = toy_split(cfg.config);
    loop::start_run(cfg, split, dir / "full");
    auto cut = loop::start_run(cfg, split, dir / "cut", nullptr, loop::RunOptions{2});
    loop::resume_run(dir / "cut");
    bool same = read_file(dir / "cut/manifest.json") == read_file(dir / "full/manifest.json");
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {same && !cut.complete && secs < 60.0,
            fmt::format("stopped after {} rounds, resumed; manifests {}; {:.2f} s", cut.rounds.size(),
                        same ? "byte-identical" : "differ", secs)};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"weighted-average reproduction", criterion1}, {"grading oracle", criterion2},
        {"gain annotations", criterion3},              {"convergence on paper series", criterion4},
        {"KL/NLL identity", criterion5},               {"filter soundness", criterion6},
        {"end-to-end toy loop", criterion7},           {"prompt goldens", criterion8},
        {"resume determinism", criterion9},
    };
    int failed = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, fmt::format("threw: {}", e.what())};
        }
        failed += !v.pass;
        std::cout << fmt::format("{} {} {}: {}", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail)
                  << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<size_t>(failed),
                             criteria.size())
              << std::endl;
    return failed == 0 ? 0 : 1;
}
