// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/loop.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "undo/eval.hpp"
#include "undo/http_backend.hpp"
#include "undo/toy.hpp"

namespace undo::loop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
const std::vector<std::string> kSteps = {"teacher", "train", "validate", "student_gens", "test"};

corpus::AnswerKind kind_of(const corpus::Problem& p) {
    auto it = p.metadata.find("answer_kind");
    return it == p.metadata.end() ? corpus::AnswerKind::numeric : corpus::answer_kind_from_string(it->second);
}

std::string iter_dir(int k) { return fmt::format("iter_{}", k); }

std::string instruction_of(const config::RunConfig& c) {
    return c.instruction.empty() ? std::string(prompts::kDefaultInstruction) : c.instruction;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::vector<json> out;
    for (const auto& line : split_lines(read_file(path))) {
        if (!trim(line).empty()) out.push_back(json::parse(line));
    }
    return out;
}

std::string jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

class Controller {
public:
    Controller(fs::path run_dir, json manifest, config::LoadedConfig cfg, Backends backends)
        : dir_(std::move(run_dir)), manifest_(std::move(manifest)), cfg_(std::move(cfg)),
          backends_(std::move(backends)), templates_(configured_templates(cfg_.config)),
          suites_(configured_test_suites(cfg_.config)) {
        train_ = corpus::load_corpus(dir_ / "corpus/train.jsonl");
        validation_ = corpus::load_corpus(dir_ / "corpus/validation.jsonl");
        for (const auto& p : train_) by_id_[p.id] = p;
        for (const auto& p : validation_) by_id_[p.id] = p;
    }

    RunResult run(const RunOptions& options);

private:
    const config::RunConfig& c() const { return cfg_.config; }
    fs::path round_path(int k) const { return dir_ / iter_dir(k); }

    json& round_json(int k);
    bool step_done(int k, const std::string& step);
    void save_manifest() { write_file_atomic(dir_ / "manifest.json", manifest_.dump(2) + "\n"); }
    void write_artifact(int k, const std::string& name, const std::string& contents, json& artifacts);
    void record_timing(int k, const std::string& step, double seconds);

    backends::CheckpointHandle base_handle() const { return {c().base_checkpoint, {}, ""}; }
    backends::CheckpointHandle checkpoint_of(int k) const;
    std::map<std::string, std::vector<prompts::ValidationHistoryEntry>> history_through(int k) const;
    std::vector<double> validation_series() const;

    void run_round(int k);
    void step_teacher(int k, json& info);
    void step_train(int k, json& info);
    void step_validate(int k, json& info);
    void step_student_gens(int k, json& info);
    void step_test(int k, json& info);

    fs::path dir_;
    json manifest_;
    config::LoadedConfig cfg_;
    Backends backends_;
    prompts::TemplateSet templates_;
    std::vector<corpus::TestSuite> suites_;
    std::vector<corpus::Problem> train_;
    std::vector<corpus::Problem> validation_;
    std::map<std::string, corpus::Problem> by_id_;
};

json& Controller::round_json(int k) {
    auto& rounds = manifest_["rounds"];
    while (static_cast<int>(rounds.size()) < k) {
        int n = static_cast<int>(rounds.size()) + 1;
        rounds.push_back(json{{"k", n}, {"epochs", c().epochs_for_round(n)}, {"status", "running"}, {"steps", json::object()}});
    }
    return rounds[k - 1];
}

bool Controller::step_done(int k, const std::string& step) {
    auto& r = round_json(k);
    return r["steps"].contains(step);
}

void Controller::write_artifact(int k, const std::string& name, const std::string& contents, json& artifacts) {
    write_file_atomic(round_path(k) / name, contents);
    artifacts[name] = sha256_hex(contents);
}

void Controller::record_timing(int k, const std::string& step, double seconds) {
    auto path = dir_ / "timing.json";
    json t = fs::exists(path) ? json::parse(read_file(path)) : json::object();
    t[std::to_string(k)][step] = seconds;
    write_file_atomic(path, t.dump(2) + "\n");
}

backends::CheckpointHandle Controller::checkpoint_of(int k) const {
    if (k == 0) return base_handle();
    return backends::checkpoint_from_json(json::parse(read_file(round_path(k) / "checkpoint.json")));
}

std::map<std::string, std::vector<prompts::ValidationHistoryEntry>> Controller::history_through(int k) const {
    std::map<std::string, std::vector<prompts::ValidationHistoryEntry>> out;
    for (int j = 1; j <= k; ++j) {
        for (const auto& row : read_jsonl(round_path(j) / "val_scores.jsonl")) {
            out[row.at("problem_id").get<std::string>()].push_back(
                {row.at("iteration").get<int>(), row.at("teacher_answer").get<std::string>(),
                 row.at("student_answer").get<std::string>(), row.at("score").get<int>()});
        }
    }
    return out;
}

std::vector<double> Controller::validation_series() const {
    std::vector<double> out;
    for (const auto& r : manifest_["rounds"]) {
        if (r.value("status", "") != "complete") break;
        out.push_back(r["steps"]["validate"]["accuracy"].get<double>());
    }
    return out;
}

void Controller::step_teacher(int k, json& info) {
    std::string instruction = instruction_of(c());
    auto history = history_through(k - 1);

    // Latest retained rationale and latest student generation per question.
    std::map<std::string, std::string> prev_teacher, prev_student;
    for (int j = 1; j < k; ++j) {
        for (const auto& row : read_jsonl(round_path(j) / "teacher_records.jsonl")) {
            if (row.at("retained").get<bool>())
                prev_teacher[row.at("problem_id").get<std::string>()] = row.at("rationale").get<std::string>();
        }
        for (const auto& g : grade::load_graded(round_path(j) / "student_train_gens.jsonl"))
            prev_student[g.problem_id] = g.generation;
    }

    std::vector<prompts::ValidationExample> examples;
    for (const auto& v : validation_) examples.push_back({v, history[v.id]});

    std::vector<const corpus::Problem*> targets;
    for (const auto& p : train_) targets.push_back(&p);
    for (const auto& p : validation_) targets.push_back(&p);

    std::vector<std::string> prompt_texts;
    int pruned = 0;
    for (const auto* p : targets) {
        prompts::GapContext gap;
        gap.question = p->question;
        gap.validation_examples = examples;
        if (auto h = history.find(p->id); h != history.end() && !h->second.empty()) {
            gap.prev_teacher = h->second.back().teacher_answer;
            gap.prev_student = h->second.back().student_answer;
        } else {
            if (auto t = prev_teacher.find(p->id); t != prev_teacher.end()) gap.prev_teacher = t->second;
            if (auto s = prev_student.find(p->id); s != prev_student.end()) gap.prev_student = s->second;
        }
        auto fitted = teacher_prompt(templates_, c(), k, gap);
        pruned = std::max(pruned, fitted.pruned_iterations);
        prompt_texts.push_back(std::move(fitted.prompt));
    }

    std::vector<json> records(targets.size());
    std::vector<size_t> pending(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) pending[i] = i;
    for (int attempt = 0; attempt <= c().teacher_retries && !pending.empty(); ++attempt) {
        auto params = c().teacher_sampling;
        if (params.seed) params.seed = *params.seed + static_cast<uint64_t>(attempt);
        std::vector<std::string> batch;
        for (size_t i : pending) batch.push_back(prompt_texts[i]);
        auto results = backends::batch_generate(*backends_.teacher, batch, params, c().parallelism);
        std::vector<size_t> again;
        for (size_t n = 0; n < pending.size(); ++n) {
            size_t i = pending[n];
            const auto* p = targets[i];
            bool is_train = i < train_.size();
            json row{{"problem_id", p->id}, {"split", is_train ? "train" : "validation"}, {"attempts", attempt + 1}};
            if (!results[n].ok()) {
                spdlog::warn("round {}: teacher failed on {}: {}", k, p->id, results[n].error);
                row.update({{"rationale", ""}, {"extracted", ""}, {"score", 0}, {"retained", false},
                            {"error", results[n].error}});
            } else {
                auto rationale = prompts::strip_new_answer_header(*results[n].text);
                auto graded = grade::grade_one(*p, rationale, kind_of(*p));
                bool keep = is_train && graded.score == 1;
                row.update({{"rationale", rationale}, {"extracted", graded.extracted.raw}, {"score", graded.score},
                            {"retained", keep}});
            }
            records[i] = row;
            if (is_train && !row["retained"].get<bool>()) again.push_back(i);
        }
        pending = std::move(again);
    }

    std::vector<backends::TrainingRecord> data;
    size_t discarded = 0;
    for (size_t i = 0; i < train_.size(); ++i) {
        if (records[i]["retained"].get<bool>())
            data.push_back({train_[i].question, records[i]["rationale"].get<std::string>(), instruction});
        else
            ++discarded;
    }
    if (data.empty())
        throw Error(fmt::format("no teacher rationale survived the answer filter ({} discarded)", discarded));

    json artifacts = json::object();
    write_artifact(k, "teacher_records.jsonl", jsonl(records), artifacts);
    write_artifact(k, "teacher_data.jsonl", backends::serialize_training_data(data), artifacts);
    info = {{"artifacts", artifacts}, {"retained", data.size()}, {"discarded", discarded},
            {"pruned_iterations", pruned}};
    spdlog::info("round {}: kept {} teacher rationales, discarded {}", k, data.size(), discarded);
}

void Controller::step_train(int k, json& info) {
    backends::FineTuneJob job;
    job.base = checkpoint_of(k - 1);
    job.dataset_path = round_path(k) / "teacher_data.jsonl";
    job.epochs = c().epochs_for_round(k);
    job.instruction = instruction_of(c());
    job.hyper = c().trainer.hyper;
    auto ckpt = backends_.trainer->fine_tune(job);
    json artifacts = json::object();
    write_artifact(k, "checkpoint.json", backends::to_json(ckpt).dump(2) + "\n", artifacts);
    info = {{"artifacts", artifacts}, {"checkpoint", ckpt.id}, {"epochs", job.epochs}};
    spdlog::info("round {}: trained {} for {} epochs", k, ckpt.id, job.epochs);
}

void Controller::step_validate(int k, json& info) {
    auto student = backends_.student(checkpoint_of(k));
    std::string instruction = instruction_of(c());
    std::map<std::string, std::string> teacher_answers;
    for (const auto& row : read_jsonl(round_path(k) / "teacher_records.jsonl")) {
        if (row.at("split") == "validation")
            teacher_answers[row.at("problem_id").get<std::string>()] = row.at("rationale").get<std::string>();
    }
    std::vector<std::string> batch;
    for (const auto& v : validation_) batch.push_back(prompts::build_student_prompt(templates_, v.question, instruction, {}));
    auto results = backends::batch_generate(*student, batch, c().student_sampling, c().parallelism);
    std::vector<json> rows;
    size_t correct = 0;
    for (size_t i = 0; i < validation_.size(); ++i) {
        const auto& v = validation_[i];
        std::string text = results[i].ok() ? *results[i].text : "";
        auto graded = grade::grade_one(v, text, kind_of(v));
        correct += graded.score;
        rows.push_back({{"problem_id", v.id}, {"iteration", k}, {"teacher_answer", teacher_answers[v.id]},
                        {"student_answer", text}, {"extracted", graded.extracted.raw}, {"score", graded.score}});
        if (!results[i].ok()) rows.back()["error"] = results[i].error;
    }
    double acc = validation_.empty() ? 0.0 : static_cast<double>(correct) / validation_.size();
    json artifacts = json::object();
    write_artifact(k, "val_scores.jsonl", jsonl(rows), artifacts);
    info = {{"artifacts", artifacts}, {"correct", correct}, {"n", validation_.size()}, {"accuracy", acc}};
    spdlog::info("round {}: validation accuracy {}/{}", k, correct, validation_.size());
}

void Controller::step_student_gens(int k, json& info) {
    // Round 1 covers every training question; later rounds refresh the
    // questions that kept a rationale.
    std::set<std::string> wanted;
    for (const auto& row : read_jsonl(round_path(k) / "teacher_records.jsonl")) {
        if (row.at("split") == "train" && (k == 1 || row.at("retained").get<bool>()))
            wanted.insert(row.at("problem_id").get<std::string>());
    }
    if (k == 1) {
        for (const auto& p : train_) wanted.insert(p.id);
    }
    auto ckpt = (k == 1 && c().init_student == "pretrained") ? base_handle() : checkpoint_of(k);
    auto student = backends_.student(ckpt);
    std::string instruction = instruction_of(c());
    std::vector<const corpus::Problem*> targets;
    std::vector<std::string> batch;
    for (const auto& p : train_) {
        if (!wanted.contains(p.id)) continue;
        targets.push_back(&p);
        batch.push_back(prompts::build_student_prompt(templates_, p.question, instruction, {}));
    }
    auto results = backends::batch_generate(*student, batch, c().student_sampling, c().parallelism);
    std::vector<grade::GradedGeneration> graded;
    for (size_t i = 0; i < targets.size(); ++i)
        graded.push_back(grade::grade_one(*targets[i], results[i].ok() ? *results[i].text : "", kind_of(*targets[i])));
    json artifacts = json::object();
    write_artifact(k, "student_train_gens.jsonl", grade::serialize_graded(graded), artifacts);
    info = {{"artifacts", artifacts}, {"checkpoint", ckpt.id}, {"n", graded.size()}};
}

void Controller::step_test(int k, json& info) {
    json artifacts = json::object();
    json metrics = json::array();
    if (!suites_.empty()) {
        auto student = backends_.student(checkpoint_of(k));
        for (const auto& suite : suites_) {
            auto ev = eval::evaluate_suite(*student, suite, templates_, instruction_of(c()), c().student_sampling,
                                           c().parallelism);
            write_artifact(k, fmt::format("test_graded_{}.jsonl", suite.name), grade::serialize_graded(ev.graded),
                           artifacts);
            metrics.push_back(grade::to_json(ev.metrics));
            spdlog::info("round {}: {} accuracy {:.4f}", k, suite.name, ev.metrics.accuracy);
        }
    }
    write_artifact(k, "test_metrics.json", metrics.dump(2) + "\n", artifacts);
    info = {{"artifacts", artifacts}};
}

void Controller::run_round(int k) {
    fs::create_directories(round_path(k));
    auto& r = round_json(k);
    if (r["status"] == "failed") {
        r["status"] = "running";
        r.erase("failed_step");
        r.erase("error");
        fs::remove(round_path(k) / "FAILED");
    }
    manifest_["status"] = "running";
    save_manifest();
    for (const auto& step : kSteps) {
        if (step_done(k, step)) continue;
        Timer timer;
        json info;
        try {
            if (step == "teacher") step_teacher(k, info);
            else if (step == "train") step_train(k, info);
            else if (step == "validate") step_validate(k, info);
            else if (step == "student_gens") step_student_gens(k, info);
            else step_test(k, info);
        } catch (const std::exception& e) {
            auto& rr = round_json(k);
            rr["status"] = "failed";
            rr["failed_step"] = step;
            rr["error"] = e.what();
            manifest_["status"] = "failed";
            write_file_atomic(round_path(k) / "FAILED", fmt::format("step: {}\nerror: {}\n", step, e.what()));
            save_manifest();
            throw RoundFailed(k, step, e.what());
        }
        round_json(k)["steps"][step] = info;
        save_manifest();
        record_timing(k, step, timer.seconds());
    }
    round_json(k)["status"] = "complete";
    save_manifest();
}

IterationState load_state(const fs::path& dir, const json& round) {
    IterationState s;
    s.k = round.at("k").get<int>();
    auto rdir = dir / iter_dir(s.k);
    s.checkpoint = backends::checkpoint_from_json(json::parse(read_file(rdir / "checkpoint.json")));
    s.teacher_dataset_path = rdir / "teacher_data.jsonl";
    const auto& steps = round.at("steps");
    s.retained = steps.at("teacher").at("retained").get<size_t>();
    s.discarded = steps.at("teacher").at("discarded").get<size_t>();
    s.validation_accuracy = steps.at("validate").at("accuracy").get<double>();
    for (int j = 1; j <= s.k; ++j) {
        for (const auto& row : read_jsonl(dir / iter_dir(j) / "val_scores.jsonl")) {
            s.validation_history[row.at("problem_id").get<std::string>()].push_back(
                {row.at("iteration").get<int>(), row.at("teacher_answer").get<std::string>(),
                 row.at("student_answer").get<std::string>(), row.at("score").get<int>()});
        }
    }
    for (const auto& m : json::parse(read_file(rdir / "test_metrics.json"))) {
        auto metrics = grade::metrics_from_json(m);
        s.metrics[metrics.suite] = metrics;
    }
    if (fs::exists(dir / "timing.json")) {
        auto t = json::parse(read_file(dir / "timing.json"));
        if (auto it = t.find(std::to_string(s.k)); it != t.end()) {
            for (const auto& [step, secs] : it->items()) s.wall_clock += secs.get<double>();
        }
    }
    return s;
}

RunResult Controller::run(const RunOptions& options) {
    RunResult result;
    auto finish = [&](bool complete, int best_k, const std::string& reason) {
        result.complete = complete;
        result.best_k = best_k;
        result.stop_reason = reason;
        for (const auto& r : manifest_["rounds"]) {
            if (r.value("status", "") == "complete") result.rounds.push_back(load_state(dir_, r));
        }
        return result;
    };

    if (manifest_.value("status", "") == "complete")
        return finish(true, manifest_.at("best_k").get<int>(), manifest_.value("stop_reason", ""));

    for (;;) {
        auto series = validation_series();
        int completed = static_cast<int>(series.size());
        if (completed > 0) {
            auto decision = check_convergence(series, c().patience, c().K_max);
            if (decision.stop) {
                manifest_["status"] = "complete";
                manifest_["best_k"] = decision.best_k;
                manifest_["stop_reason"] = decision.reason;
                save_manifest();
                spdlog::info("stopped after round {} ({}); best round {}", completed, decision.reason,
                             decision.best_k);
                return finish(true, decision.best_k, decision.reason);
            }
            if (options.max_rounds && completed >= *options.max_rounds)
                return finish(false, decision.best_k, "interrupted");
        }
        run_round(completed + 1);
    }
}

void verify_manifest(const fs::path& dir, const json& manifest) {
    auto check = [&](const fs::path& rel, const std::string& digest) {
        auto path = dir / rel;
        if (!fs::exists(path)) throw Error(fmt::format("run artifact {} is missing", rel.string()));
        if (sha256_file(path) != digest)
            throw Error(fmt::format("run artifact {} does not match its recorded digest", rel.string()));
    };
    for (const auto& [name, digest] : manifest.at("corpus").at("digests").items())
        check(fs::path("corpus") / name, digest.get<std::string>());
    for (const auto& r : manifest.at("rounds")) {
        for (const auto& [step, info] : r.at("steps").items()) {
            for (const auto& [name, digest] : info.at("artifacts").items())
                check(fs::path(iter_dir(r.at("k").get<int>())) / name, digest.get<std::string>());
        }
    }
}

json read_manifest(const fs::path& dir) {
    auto path = dir / "manifest.json";
    if (!fs::exists(path)) throw Error(fmt::format("{} has no manifest.json", dir.string()));
    auto m = json::parse(read_file(path));
    if (m.value("format_version", 0) != kFormatVersion)
        throw Error(fmt::format("unsupported manifest format in {}", path.string()));
    return m;
}

config::LoadedConfig config_of(const json& manifest) {
    config::LoadedConfig loaded;
    loaded.resolved = manifest.at("config");
    loaded.config = config::config_from_json(loaded.resolved);
    for (const auto& [k, v] : manifest.at("provenance").items()) loaded.provenance[k] = v.get<std::string>();
    return loaded;
}

} // namespace

RoundFailed::RoundFailed(int k, std::string step, const std::string& cause)
    : Error(fmt::format("round {} failed at step '{}': {}", k, step, cause)), k_(k), step_(std::move(step)) {}

Backends make_backends(const config::RunConfig& config, const fs::path& run_dir) {
    Backends b;
    backends::HttpOptions http;
    http.retry.attempts = config.http.attempts;
    http.retry.base_delay = std::chrono::milliseconds(config.http.base_delay_ms);
    http.timeout = std::chrono::milliseconds(config.http.timeout_ms);
    http.chat = config.http.chat;
    http.api_key_env = config.http.api_key_env;

    switch (config.teacher.kind) {
    case backends::BackendKind::scripted_teacher: {
        toy::ScriptedTeacherOptions opts;
        opts.fixes_per_round = config.toy.fixes_per_round;
        opts.gap_aware = config.toy.gap_aware;
        b.teacher = std::make_shared<toy::ScriptedTeacher>(opts);
        break;
    }
    case backends::BackendKind::http:
        b.teacher = std::make_shared<backends::HttpGenerator>(config.teacher, http);
        break;
    default:
        throw Error(fmt::format("backend kind '{}' cannot act as teacher", backends::to_string(config.teacher.kind)));
    }
    if (config.toy.noise_rate > 0.0)
        b.teacher = std::make_shared<toy::NoisyTeacher>(b.teacher, config.toy.noise_rate, config.toy.noise_seed);

    if (config.trainer.kind == "toy") {
        auto trainer = std::make_shared<toy::ToyTrainer>(run_dir / "checkpoints");
        b.trainer = trainer;
        b.student = [trainer](const backends::CheckpointHandle& ckpt) -> std::shared_ptr<backends::Generator> {
            return std::make_shared<toy::ToyStudent>(trainer->load(ckpt));
        };
        return b;
    }
    if (config.trainer.kind == "http") {
        backends::TrainerPollOptions poll;
        poll.poll_interval = std::chrono::milliseconds(config.trainer.poll_interval_ms);
        poll.deadline = std::chrono::seconds(config.trainer.timeout_s);
        b.trainer = std::make_shared<backends::HttpTrainer>(config.trainer.endpoint.value_or(""), poll);
    } else if (config.trainer.kind == "command") {
        b.trainer = std::make_shared<backends::CommandTrainer>(config.trainer.command.value_or(""),
                                                               std::chrono::seconds(config.trainer.timeout_s));
    } else {
        throw Error(fmt::format("unknown trainer kind '{}'", config.trainer.kind));
    }
    if (config.student.kind != backends::BackendKind::http)
        throw Error("a non-toy trainer needs an http student backend");
    auto handle = config.student;
    auto base = config.base_checkpoint;
    b.student = [handle, base, http](const backends::CheckpointHandle& ckpt) -> std::shared_ptr<backends::Generator> {
        auto h = handle;
        if (ckpt.id != base) h.model_name = ckpt.id;
        return std::make_shared<backends::HttpGenerator>(h, http);
    };
    return b;
}

ConvergenceDecision check_convergence(std::span<const double> history, int patience, int K_max) {
    if (history.empty()) throw Error("convergence check needs at least one round");
    if (patience < 1) throw Error("patience must be >= 1");
    ConvergenceDecision d;
    size_t best = 0;
    for (size_t i = 1; i < history.size(); ++i) {
        if (history[i] > history[best]) best = i;
    }
    d.best_k = static_cast<int>(best) + 1;
    size_t n = history.size();
    if (n > static_cast<size_t>(patience)) {
        size_t cut = n - static_cast<size_t>(patience);
        double before = *std::max_element(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(cut));
        bool improved = false;
        for (size_t i = cut; i < n; ++i) improved = improved || history[i] > before;
        if (!improved) {
            d.stop = true;
            d.reason = "saturated";
            return d;
        }
    }
    if (static_cast<int>(n) >= K_max) {
        d.stop = true;
        d.reason = "k_max";
    }
    return d;
}

std::vector<corpus::TestSuite> configured_test_suites(const config::RunConfig& config) {
    std::vector<corpus::TestSuite> out;
    for (const auto& s : config.test_suites) {
        std::optional<fs::path> few;
        if (s.few_shot) few = *s.few_shot;
        out.push_back(corpus::load_test_suite(s.path, s.name, few));
    }
    if (config.toy.test_suite && config.student.kind == backends::BackendKind::toy_student)
        out.push_back(toy::make_test_suite());
    return out;
}

prompts::TemplateSet configured_templates(const config::RunConfig& config) {
    return config.templates_dir ? prompts::TemplateSet::load(*config.templates_dir) : prompts::TemplateSet::shipped();
}

prompts::FittedPrompt teacher_prompt(const prompts::TemplateSet& templates, const config::RunConfig& config, int k,
                                     const prompts::GapContext& gap) {
    std::string instruction = instruction_of(config);
    if (k <= 1) {
        auto prompt = prompts::build_student_prompt(templates, gap.question, instruction, {});
        auto check = prompts::check_budget(prompt, config.context_budget, config.chars_per_token);
        if (!check.ok) throw prompts::BudgetExceeded(check.estimate, config.context_budget);
        return {prompt, 0};
    }
    auto ctx = gap;
    for (auto& ex : ctx.validation_examples) {
        std::erase_if(ex.history, [k](const auto& e) { return e.iteration >= k; });
    }
    return prompts::fit_gap_prompt(templates, std::move(ctx), instruction, config.context_budget,
                                   config.prune_oldest, config.chars_per_token);
}

RunResult start_run(const config::LoadedConfig& config, const corpus::CorpusSplit& split, const fs::path& run_dir,
                    const Backends* backends, RunOptions options) {
    if (fs::exists(run_dir / "manifest.json"))
        throw Error(fmt::format("{} already holds a run; use resume", run_dir.string()));
    if (split.train.empty()) throw Error("training split is empty");
    if (split.validation.empty()) throw Error("validation split is empty");
    fs::create_directories(run_dir / "corpus");
    auto train_text = corpus::serialize_corpus(split.train);
    auto val_text = corpus::serialize_corpus(split.validation);
    write_file_atomic(run_dir / "corpus/train.jsonl", train_text);
    write_file_atomic(run_dir / "corpus/validation.jsonl", val_text);

    auto templates = configured_templates(config.config);
    auto suites = configured_test_suites(config.config);
    json suite_info = json::object();
    for (const auto& s : suites)
        suite_info[s.name] = {{"size", s.problems.size()}, {"digest", sha256_hex(corpus::serialize_corpus(s.problems))}};
    std::vector<std::string> val_ids;
    for (const auto& p : split.validation) val_ids.push_back(p.id);

    json manifest = {
        {"format_version", kFormatVersion},
        {"config", config.resolved},
        {"provenance", config::provenance_json(config.provenance)},
        {"templates", templates.digests()},
        {"corpus",
         {{"digests", {{"train.jsonl", sha256_hex(train_text)}, {"validation.jsonl", sha256_hex(val_text)}}},
          {"train_size", split.train.size()},
          {"validation_ids", val_ids},
          {"split_seed", split.seed}}},
        {"test_suites", suite_info},
        {"rounds", json::array()},
        {"status", "running"},
    };
    write_file_atomic(run_dir / "manifest.json", manifest.dump(2) + "\n");
    Backends b = backends ? *backends : make_backends(config.config, run_dir);
    Controller controller(run_dir, std::move(manifest), config, std::move(b));
    return controller.run(options);
}

RunResult resume_run(const fs::path& run_dir, const Backends* backends, RunOptions options) {
    auto manifest = read_manifest(run_dir);
    verify_manifest(run_dir, manifest);
    auto cfg = config_of(manifest);
    if (configured_templates(cfg.config).digests() != manifest.at("templates").get<std::map<std::string, std::string>>())
        throw Error("prompt templates changed since the run started");
    Backends b = backends ? *backends : make_backends(cfg.config, run_dir);
    Controller controller(run_dir, std::move(manifest), std::move(cfg), std::move(b));
    return controller.run(options);
}

RunStatus inspect_run(const fs::path& run_dir) {
    auto manifest = read_manifest(run_dir);
    verify_manifest(run_dir, manifest);
    RunStatus s;
    s.config = config_of(manifest);
    s.status = manifest.value("status", "running");
    s.best_k = manifest.value("best_k", 0);
    for (const auto& r : manifest.at("rounds")) {
        if (r.value("status", "") == "complete") s.latest = load_state(run_dir, r);
    }
    return s;
}

fs::path export_final_dataset(const fs::path& run_dir, const fs::path& out) {
    auto manifest = read_manifest(run_dir);
    verify_manifest(run_dir, manifest);
    int best = manifest.value("best_k", 0);
    if (best == 0) {
        std::vector<double> series;
        for (const auto& r : manifest.at("rounds")) {
            if (r.value("status", "") != "complete") break;
            series.push_back(r["steps"]["validate"]["accuracy"].get<double>());
        }
        if (series.empty()) throw Error("the run has no completed round to export");
        best = check_convergence(series, 1, std::numeric_limits<int>::max()).best_k;
    }
    auto contents = read_file(run_dir / iter_dir(best) / "teacher_data.jsonl");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, contents);
    return out;
}

config::LoadedConfig equal_epoch_baseline(const config::LoadedConfig& config, int total_epochs) {
    if (total_epochs < 1) throw Error("baseline needs at least one epoch");
    auto loaded = config::resolve_config(config.resolved, {"K_max=1", fmt::format("epochs_schedule=[{}]", total_epochs),
                                                           fmt::format("name={}", json(config.config.name + "-baseline").dump())});
    return loaded;
}

} // namespace undo::loop
