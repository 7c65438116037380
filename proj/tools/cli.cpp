// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "undo/config.hpp"
#include "undo/corpus.hpp"
#include "undo/eval.hpp"
#include "undo/grade.hpp"
#include "undo/loop.hpp"
#include "undo/prompts.hpp"
#include "undo/sim.hpp"
#include "undo/toy.hpp"

namespace undo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Args {
    std::string config;
    std::vector<std::string> sets;
    std::string in;
    std::string out;
    std::string corpus;
    std::string run_dir;
    std::string format = "text";
    std::string kind = "numeric";
    std::string role = "student";
    std::string question_type = "math-word-problem";
    bool any_type = false;
    bool toy = false;
    size_t m = 20;
    uint64_t seed = 0;
    std::optional<int> max_rounds;
    std::optional<int> baseline_epochs;
    std::optional<int> round;
    std::string fixture;
    std::string plot;
    std::string suite;
    std::string suite_path;
    std::string few_shot;
    std::string scenario;
    int rounds = 4;
    bool standard = false;
    size_t identity_pairs = 0;
    bool verbose = false;
};

config::LoadedConfig load(const Args& a) {
    if (a.config.empty()) return config::resolve_config(json::object(), a.sets);
    return config::load_config(a.config, a.sets);
}

void emit(std::ostream& out, const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    write_file_atomic(path, text);
}

corpus::CorpusSplit load_split(const Args& a, const config::RunConfig& cfg) {
    std::vector<corpus::Problem> problems;
    if (!a.corpus.empty()) problems = corpus::load_corpus(a.corpus);
    else if (a.toy || cfg.student.kind == backends::BackendKind::toy_student) problems = toy::make_corpus();
    else throw CLI::ValidationError("--corpus", "--corpus is required unless the student is a toy student");
    return corpus::split_validation(problems, cfg.m, cfg.seed);
}

void print_result(std::ostream& out, const loop::RunResult& r) {
    for (const auto& s : r.rounds) {
        out << fmt::format("round {}: validation {:.4f}, kept {}, discarded {}, checkpoint {}\n", s.k,
                           s.validation_accuracy, s.retained, s.discarded, s.checkpoint.id);
    }
    if (r.complete) out << fmt::format("complete: best round {} ({})\n", r.best_k, r.stop_reason);
    else out << fmt::format("stopped after {} rounds; resume to continue\n", r.rounds.size());
}

int cmd_ingest(const Args& a, std::ostream& out) {
    auto problems = corpus::load_corpus(a.in);
    corpus::PreprocessRules rules;
    if (a.any_type) rules.required_question_type.reset();
    else rules.required_question_type = a.question_type;
    auto result = corpus::preprocess(problems, rules);
    emit(out, a.out, corpus::serialize_corpus(result.problems));
    spdlog::info("kept {} of {} problems", result.problems.size(), problems.size());
    for (const auto& [reason, n] : result.dropped) spdlog::info("dropped {} ({})", n, reason);
    return kExitOk;
}

int cmd_split(const Args& a, std::ostream& out) {
    auto problems = a.toy ? toy::make_corpus() : corpus::load_corpus(a.in);
    auto split = corpus::split_validation(problems, a.m, a.seed);
    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "train.jsonl", corpus::serialize_corpus(split.train));
    write_file_atomic(fs::path(a.out) / "validation.jsonl", corpus::serialize_corpus(split.validation));
    out << fmt::format("train {} validation {}\n", split.train.size(), split.validation.size());
    return kExitOk;
}

int cmd_generate(const Args& a, std::ostream& out) {
    auto loaded = load(a);
    const auto& cfg = loaded.config;
    auto problems = a.toy ? toy::make_corpus() : corpus::load_corpus(a.in);
    fs::path scratch = a.run_dir.empty() ? fs::temp_directory_path() / "undo-generate" : fs::path(a.run_dir);
    auto b = loop::make_backends(cfg, scratch);
    auto templates = loop::configured_templates(cfg);
    std::string instruction = cfg.instruction.empty() ? std::string(prompts::kDefaultInstruction) : cfg.instruction;
    std::shared_ptr<backends::Generator> gen;
    backends::GenerationParams params;
    if (a.role == "teacher") {
        gen = b.teacher;
        params = cfg.teacher_sampling;
    } else {
        backends::CheckpointHandle ckpt{cfg.base_checkpoint, {}, ""};
        if (a.round) {
            ckpt = backends::checkpoint_from_json(
                json::parse(read_file(fs::path(a.run_dir) / fmt::format("iter_{}", *a.round) / "checkpoint.json")));
        }
        gen = b.student(ckpt);
        params = cfg.student_sampling;
    }
    std::vector<std::string> prompts_;
    for (const auto& p : problems) prompts_.push_back(prompts::build_student_prompt(templates, p.question, instruction, {}));
    auto results = backends::batch_generate(*gen, prompts_, params, cfg.parallelism);
    std::string text;
    size_t failed = 0;
    for (size_t i = 0; i < problems.size(); ++i) {
        json row{{"problem_id", problems[i].id}, {"generation", results[i].text.value_or("")}};
        if (!results[i].ok()) {
            row["error"] = results[i].error;
            ++failed;
        }
        text += row.dump() + "\n";
    }
    emit(out, a.out, text);
    if (failed) spdlog::warn("{} of {} generations failed", failed, problems.size());
    return kExitOk;
}

int cmd_grade(const Args& a, std::ostream& out) {
    std::map<std::string, corpus::Problem> by_id;
    for (auto& p : corpus::load_corpus(a.corpus)) by_id[p.id] = std::move(p);
    std::vector<std::pair<std::string, std::string>> gens;
    for (const auto& line : split_lines(read_file(a.in))) {
        if (trim(line).empty()) continue;
        auto j = json::parse(line);
        gens.emplace_back(j.at("problem_id").get<std::string>(), j.at("generation").get<std::string>());
    }
    auto graded = grade::grade_batch(gens, by_id, corpus::answer_kind_from_string(a.kind));
    emit(out, a.out, grade::serialize_graded(graded));
    if (!graded.empty()) {
        auto m = grade::accuracy(graded, a.suite.empty() ? "graded" : a.suite);
        spdlog::info("{} of {} correct ({:.4f})", m.correct, m.n, m.accuracy);
    }
    return kExitOk;
}

int cmd_distill(const Args& a, std::ostream& out) {
    auto loaded = load(a);
    if (a.baseline_epochs) loaded = loop::equal_epoch_baseline(loaded, *a.baseline_epochs);
    auto split = load_split(a, loaded.config);
    loop::RunOptions opts;
    opts.max_rounds = a.max_rounds;
    fs::path dir = a.run_dir.empty() ? fs::path("runs") / loaded.config.name : fs::path(a.run_dir);
    print_result(out, loop::start_run(loaded, split, dir, nullptr, opts));
    return kExitOk;
}

int cmd_resume(const Args& a, std::ostream& out) {
    loop::RunOptions opts;
    opts.max_rounds = a.max_rounds;
    print_result(out, loop::resume_run(a.run_dir, nullptr, opts));
    return kExitOk;
}

int cmd_status(const Args& a, std::ostream& out) {
    auto s = loop::inspect_run(a.run_dir);
    json j{{"status", s.status}, {"best_k", s.best_k}, {"name", s.config.config.name}};
    if (s.latest) {
        j["latest"] = {{"k", s.latest->k},
                       {"checkpoint", s.latest->checkpoint.id},
                       {"validation_accuracy", s.latest->validation_accuracy},
                       {"retained", s.latest->retained},
                       {"discarded", s.latest->discarded}};
    }
    out << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_eval(const Args& a, std::ostream& out) {
    auto s = loop::inspect_run(a.run_dir);
    const auto& cfg = s.config.config;
    int k = a.round.value_or(s.best_k ? s.best_k : (s.latest ? s.latest->k : 0));
    if (k < 1) throw Error("the run has no trained checkpoint yet");
    auto ckpt = backends::checkpoint_from_json(
        json::parse(read_file(fs::path(a.run_dir) / fmt::format("iter_{}", k) / "checkpoint.json")));
    auto b = loop::make_backends(cfg, a.run_dir);
    auto student = b.student(ckpt);
    std::optional<fs::path> few;
    if (!a.few_shot.empty()) few = a.few_shot;
    auto suite = corpus::load_test_suite(a.suite_path, a.suite, few);
    std::string instruction = cfg.instruction.empty() ? std::string(prompts::kDefaultInstruction) : cfg.instruction;
    auto ev = eval::evaluate_suite(*student, suite, loop::configured_templates(cfg), instruction, cfg.student_sampling,
                                   cfg.parallelism);
    if (!a.out.empty()) write_file_atomic(a.out, grade::serialize_graded(ev.graded));
    out << grade::to_json(ev.metrics).dump(2) << "\n";
    return kExitOk;
}

int cmd_report(const Args& a, std::ostream& out) {
    auto format = eval::format_from_string(a.format);
    std::vector<eval::IterationReport> reports;
    std::vector<eval::OodEntry> ood;
    if (!a.fixture.empty()) {
        auto f = eval::load_fixture(fs::path(a.fixture));
        reports = std::move(f.reports);
        ood = std::move(f.ood);
    } else {
        auto s = loop::inspect_run(a.run_dir);
        std::vector<eval::IterationMetrics> rows;
        std::vector<eval::IterationGradings> gradings;
        for (int k = 1; s.latest && k <= s.latest->k; ++k) {
            auto dir = fs::path(a.run_dir) / fmt::format("iter_{}", k);
            eval::IterationMetrics m;
            eval::IterationGradings g;
            for (const auto& mj : json::parse(read_file(dir / "test_metrics.json"))) {
                auto metrics = grade::metrics_from_json(mj);
                g[metrics.suite] = grade::load_graded(dir / fmt::format("test_graded_{}.jsonl", metrics.suite));
                m[metrics.suite] = std::move(metrics);
            }
            rows.push_back(std::move(m));
            gradings.push_back(std::move(g));
        }
        if (rows.empty() || rows.front().empty()) throw Error("the run has no test metrics to report");
        reports.push_back(eval::build_report(s.config.config.name, rows, &gradings));
    }
    for (const auto& r : reports) out << eval::render_table(r, format) << "\n";
    if (!ood.empty()) out << eval::render_ood_table(ood, format) << "\n";
    if (!a.plot.empty()) eval::emit_plot_series(reports, a.plot);
    return kExitOk;
}

int cmd_export(const Args& a, std::ostream& out) {
    auto path = loop::export_final_dataset(a.run_dir, a.out);
    out << path.string() << "\n";
    return kExitOk;
}

int cmd_sim(const Args& a, std::ostream& out) {
    if (a.identity_pairs > 0) {
        std::mt19937_64 rng(a.seed);
        std::uniform_int_distribution<size_t> size(1, 32);
        double worst = 0.0;
        for (size_t i = 0; i < a.identity_pairs; ++i) {
            size_t n = size(rng);
            auto p = sim::random_categorical(n, rng);
            auto q = sim::random_categorical(n, rng);
            worst = std::max(worst, sim::kl_nll_identity_check(p, q));
        }
        out << fmt::format("pairs {} max residual {:.3e}\n", a.identity_pairs, worst);
        return kExitOk;
    }
    auto scenario = sim::load_scenario(a.scenario);
    auto points = a.standard ? sim::simulate_standard(scenario, a.rounds) : sim::simulate_undo(scenario, a.rounds);
    emit(out, a.out, sim::trajectory_csv(points));
    return kExitOk;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Args a;
    CLI::App app{"Iterative teacher-student distillation"};
    app.name("undo");
    app.require_subcommand(1);
    app.add_flag("-v,--verbose", a.verbose, "Debug logging");

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", a.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--set", a.sets, "Override a configuration key: dotted.key=value");
    };

    auto* ingest = app.add_subcommand("ingest", "Filter a raw corpus to usable problems");
    ingest->add_option("-i,--in", a.in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    ingest->add_option("-o,--out", a.out, "Output JSONL (stdout when omitted)");
    ingest->add_option("--question-type", a.question_type, "Required question_type metadata value");
    ingest->add_flag("--any-type", a.any_type, "Keep every question type");

    auto* split = app.add_subcommand("split", "Hold out a validation split");
    split->add_option("-i,--in", a.in, "Corpus JSONL")->check(CLI::ExistingFile);
    split->add_flag("--toy", a.toy, "Use the built-in toy corpus");
    split->add_option("-m,--m", a.m, "Validation size");
    split->add_option("--seed", a.seed, "Split seed");
    split->add_option("-o,--out", a.out, "Output directory")->required();

    auto* generate = app.add_subcommand("generate", "Generate rationales for a corpus");
    add_config(generate);
    generate->add_option("-i,--in", a.in, "Corpus JSONL")->check(CLI::ExistingFile);
    generate->add_flag("--toy", a.toy, "Use the built-in toy corpus");
    generate->add_option("--role", a.role, "teacher or student")->check(CLI::IsMember({"teacher", "student"}));
    generate->add_option("--run-dir", a.run_dir, "Run directory holding checkpoints");
    generate->add_option("--round", a.round, "Serve the student trained in this round");
    generate->add_option("-o,--out", a.out, "Output JSONL (stdout when omitted)");

    auto* gradec = app.add_subcommand("grade", "Score generations against gold answers");
    gradec->add_option("-i,--in,--gens", a.in, "Generations JSONL with problem_id and generation")
        ->required()
        ->check(CLI::ExistingFile);
    gradec->add_option("--corpus,--problems", a.corpus, "Corpus JSONL with the gold answers")->required()->check(CLI::ExistingFile);
    gradec->add_option("--kind", a.kind, "numeric, latex-numeric, multiple-choice or boolean");
    gradec->add_option("--suite", a.suite, "Suite name for the metrics");
    gradec->add_option("-o,--out", a.out, "Graded JSONL (stdout when omitted)");

    auto* distill = app.add_subcommand("distill", "Run the distillation loop");
    add_config(distill);
    distill->add_option("--corpus", a.corpus, "Preprocessed corpus JSONL")->check(CLI::ExistingFile);
    distill->add_flag("--toy", a.toy, "Use the built-in toy corpus");
    distill->add_option("--run-dir", a.run_dir, "Run directory (default runs/<name>)");
    distill->add_option("--max-rounds", a.max_rounds, "Stop after this many rounds");
    distill->add_option("--baseline-epochs", a.baseline_epochs,
                        "Run standard distillation: one round with this many epochs");

    auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
    resume->add_option("--run-dir", a.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    resume->add_option("--max-rounds", a.max_rounds, "Stop after this many rounds");

    auto* status = app.add_subcommand("status", "Show the state of a run");
    status->add_option("--run-dir", a.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

    auto* evalc = app.add_subcommand("eval", "Evaluate a run's student on a test suite");
    evalc->add_option("--run-dir", a.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    evalc->add_option("--round", a.round, "Round whose student to evaluate (default: best)");
    evalc->add_option("--suite", a.suite, "Suite name (gsm8k, math500, mmlu_pro, svamp, ...)")->required();
    evalc->add_option("--suite-path", a.suite_path, "Suite JSONL")->required()->check(CLI::ExistingFile);
    evalc->add_option("--few-shot", a.few_shot, "Few-shot exemplars JSONL")->check(CLI::ExistingFile);
    evalc->add_option("-o,--out", a.out, "Graded JSONL");

    auto* report = app.add_subcommand("report", "Render the results table");
    auto* src = report->add_option_group("source");
    src->add_option("--run-dir", a.run_dir, "Run directory")->check(CLI::ExistingDirectory);
    src->add_option("--fixture", a.fixture, "Reported numbers (JSON)")->check(CLI::ExistingFile);
    src->require_option(1);
    report->add_option("-f,--format", a.format, "text, csv or markdown")
        ->check(CLI::IsMember({"text", "csv", "markdown"}));
    report->add_option("--plot", a.plot, "Write the per-iteration series CSV here");

    auto* exportc = app.add_subcommand("export-data", "Export the best round's teacher dataset");
    exportc->add_option("--run-dir", a.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    exportc->add_option("-o,--out", a.out, "Output JSONL")->required();

    auto* simc = app.add_subcommand("sim", "Categorical teacher/student simulation");
    simc->add_option("--scenario", a.scenario, "Scenario JSON")->check(CLI::ExistingFile);
    simc->add_option("-k,--k,--rounds", a.rounds, "Rounds to simulate");
    simc->add_flag("--standard", a.standard, "Ignore gap feedback");
    simc->add_option("--identity-check", a.identity_pairs, "Check the KL/NLL identity on this many random pairs");
    simc->add_option("--seed", a.seed, "Seed for --identity-check");
    simc->add_option("-o,--out", a.out, "Trajectory CSV (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto logger = spdlog::stderr_color_mt("undo-cli");
    spdlog::set_default_logger(logger);
    spdlog::set_level(a.verbose ? spdlog::level::debug : spdlog::level::info);
    struct DropLogger {
        ~DropLogger() { spdlog::drop("undo-cli"); }
    } drop;

    try {
        if (*ingest) return cmd_ingest(a, out);
        if (*split) {
            if (!a.toy && a.in.empty()) throw CLI::ValidationError("--in", "either --in or --toy is required");
            return cmd_split(a, out);
        }
        if (*generate) return cmd_generate(a, out);
        if (*gradec) return cmd_grade(a, out);
        if (*distill) return cmd_distill(a, out);
        if (*resume) return cmd_resume(a, out);
        if (*status) return cmd_status(a, out);
        if (*evalc) return cmd_eval(a, out);
        if (*report) return cmd_report(a, out);
        if (*exportc) return cmd_export(a, out);
        if (*simc) {
            if (a.scenario.empty() && a.identity_pairs == 0)
                throw CLI::ValidationError("--scenario", "either --scenario or --identity-check is required");
            return cmd_sim(a, out);
        }
    } catch (const CLI::Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace undo::cli
