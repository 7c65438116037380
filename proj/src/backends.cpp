// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/backends.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include <fmt/format.h>

namespace undo::backends {

using nlohmann::json;

void GenerationParams::validate() const {
    if (!(temperature >= 0.0)) throw Error("temperature must be >= 0");
    if (max_tokens < 1) throw Error("max_tokens must be >= 1");
}

json to_json(const GenerationParams& p) {
    json j{{"temperature", p.temperature}, {"max_tokens", p.max_tokens}, {"stop", p.stop}};
    j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
    return j;
}

GenerationParams generation_params_from_json(const json& j) {
    GenerationParams p;
    p.temperature = j.value("temperature", p.temperature);
    p.max_tokens = j.value("max_tokens", p.max_tokens);
    if (j.contains("stop")) p.stop = j.at("stop").get<std::vector<std::string>>();
    if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<uint64_t>();
    p.validate();
    return p;
}

std::string_view to_string(BackendKind k) {
    switch (k) {
    case BackendKind::http: return "http";
    case BackendKind::scripted_teacher: return "scripted_teacher";
    case BackendKind::toy_student: return "toy_student";
    }
    return "?";
}

std::string_view to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "http") return BackendKind::http;
    if (s == "scripted_teacher") return BackendKind::scripted_teacher;
    if (s == "toy_student") return BackendKind::toy_student;
    throw Error(fmt::format("unknown backend kind '{}' (expected http, scripted_teacher or toy_student)", s));
}

void BackendHandle::validate() const {
    if (kind == BackendKind::http && (!endpoint || endpoint->empty()))
        throw Error(fmt::format("{} backend of kind http needs an endpoint", to_string(role)));
}

TransportError::TransportError(const std::string& what, int attempts)
    : BackendError(fmt::format("{} (after {} attempt{})", what, attempts, attempts == 1 ? "" : "s")),
      attempts_(attempts) {}

ServerError::ServerError(int status, std::string server_message)
    : BackendError(fmt::format("server returned {}: {}", status, server_message)),
      status_(status),
      server_message_(std::move(server_message)) {}

ContextOverflowError::ContextOverflowError(std::string server_message)
    : BackendError(fmt::format("context window exceeded: {}", server_message)) {}

std::vector<GenerationResult> batch_generate(Generator& generator, std::span<const std::string> prompts,
                                             const GenerationParams& params, size_t parallelism) {
    if (parallelism < 1) throw Error("parallelism must be >= 1");
    std::vector<GenerationResult> results(prompts.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < prompts.size(); i = next++) {
            try {
                results[i].text = generator.generate(prompts[i], params);
            } catch (const std::exception& e) {
                results[i].error = e.what();
            }
        }
    };
    size_t threads = std::min(parallelism, prompts.size());
    if (threads <= 1) {
        worker();
        return results;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    pool.clear(); // joins
    return results;
}

json to_json(const CheckpointHandle& c) {
    json lineage = json::array();
    for (const auto& e : c.lineage) lineage.push_back({{"iteration", e.iteration}, {"dataset_digest", e.dataset_digest}});
    return {{"id", c.id}, {"lineage", lineage}, {"created_at", c.created_at}};
}

CheckpointHandle checkpoint_from_json(const json& j) {
    CheckpointHandle c;
    c.id = j.at("id").get<std::string>();
    c.created_at = j.value("created_at", "");
    for (const auto& e : j.value("lineage", json::array()))
        c.lineage.push_back({e.at("iteration").get<int>(), e.at("dataset_digest").get<std::string>()});
    return c;
}

std::string validate_job(const FineTuneJob& job) {
    if (job.epochs < 1) throw TrainerError(fmt::format("epochs must be >= 1, got {}", job.epochs));
    if (!std::filesystem::exists(job.dataset_path))
        throw TrainerError(fmt::format("dataset {} does not exist", job.dataset_path.string()));
    std::string data = read_file(job.dataset_path);
    auto records = parse_training_data(data);
    if (records.empty()) throw TrainerError(fmt::format("dataset {} is empty", job.dataset_path.string()));
    return sha256_hex(data);
}

json job_payload(const FineTuneJob& job) {
    json hyper = json::object();
    for (const auto& [k, v] : job.hyper) hyper[k] = v;
    return {{"base_checkpoint", job.base.id},
            {"dataset_path", job.dataset_path.string()},
            {"epochs", job.epochs},
            {"instruction", job.instruction},
            {"hyper", hyper}};
}

std::string serialize_training_data(std::span<const TrainingRecord> records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j{{"question", r.question}, {"rationale", r.rationale}, {"instruction", r.instruction}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<TrainingRecord> parse_training_data(std::string_view text) {
    std::vector<TrainingRecord> records;
    size_t line_no = 0;
    for (const auto& line : split_lines(text)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(fmt::format("training data line {}: {}", line_no, e.what()));
        }
        for (const char* key : {"question", "rationale"}) {
            if (!j.contains(key) || !j.at(key).is_string())
                throw Error(fmt::format("training data line {}: missing field '{}'", line_no, key));
        }
        records.push_back({j.at("question").get<std::string>(), j.at("rationale").get<std::string>(),
                           j.value("instruction", "")});
    }
    return records;
}

std::vector<TrainingRecord> load_training_data(const std::filesystem::path& path) {
    return parse_training_data(read_file(path));
}

std::vector<LineageEntry> extend_lineage(const CheckpointHandle& base, const std::string& dataset_digest) {
    auto lineage = base.lineage;
    lineage.push_back({static_cast<int>(lineage.size()) + 1, dataset_digest});
    return lineage;
}

} // namespace undo::backends
