// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "undo/util.hpp"

namespace undo::backends {

struct GenerationParams {
    /// 0 means greedy decoding.
    double temperature = 0.7;
    int max_tokens = 1024;
    std::vector<std::string> stop;
    std::optional<uint64_t> seed;

    void validate() const;
};

nlohmann::json to_json(const GenerationParams& p);
GenerationParams generation_params_from_json(const nlohmann::json& j);

enum class BackendKind { http, scripted_teacher, toy_student };
enum class Role { teacher, student };

std::string_view to_string(BackendKind k);
std::string_view to_string(Role r);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendHandle {
    BackendKind kind = BackendKind::toy_student;
    std::optional<std::string> endpoint;
    std::string model_name;
    Role role = Role::student;

    /// Throws when an http handle has no endpoint.
    void validate() const;
};

class BackendError : public Error {
public:
    using Error::Error;
};

/// Connection-level failure after all retries were spent.
class TransportError : public BackendError {
public:
    TransportError(const std::string& what, int attempts);
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

/// The server answered with an error payload.
class ServerError : public BackendError {
public:
    ServerError(int status, std::string server_message);
    int status() const { return status_; }
    const std::string& server_message() const { return server_message_; }

private:
    int status_;
    std::string server_message_;
};

/// The server reported that the prompt does not fit its context window.
class ContextOverflowError : public BackendError {
public:
    explicit ContextOverflowError(std::string server_message);
};

/// A text generator. Implementations must be safe to call concurrently.
class Generator {
public:
    virtual ~Generator() = default;
    virtual std::string generate(const std::string& prompt, const GenerationParams& params) = 0;
};

struct GenerationResult {
    std::optional<std::string> text;
    std::string error;
    bool ok() const { return text.has_value(); }
};

/// Runs `prompts` through `generator` with at most `parallelism` calls in
/// flight. Result i belongs to prompt i. A failing item records its error and
/// does not stop the others.
std::vector<GenerationResult> batch_generate(Generator& generator, std::span<const std::string> prompts,
                                             const GenerationParams& params, size_t parallelism);

struct LineageEntry {
    int iteration = 0;
    std::string dataset_digest;
    bool operator==(const LineageEntry&) const = default;
};

struct CheckpointHandle {
    std::string id;
    std::vector<LineageEntry> lineage;
    std::string created_at;

    bool operator==(const CheckpointHandle&) const = default;
};

nlohmann::json to_json(const CheckpointHandle& c);
CheckpointHandle checkpoint_from_json(const nlohmann::json& j);

struct FineTuneJob {
    CheckpointHandle base;
    std::filesystem::path dataset_path;
    int epochs = 1;
    std::string instruction;
    std::map<std::string, std::string> hyper;
};

/// Checks epochs >= 1 and that the dataset exists, is non-empty and parses
/// as training JSONL. Returns the dataset digest.
std::string validate_job(const FineTuneJob& job);

/// The trainer wire payload.
nlohmann::json job_payload(const FineTuneJob& job);

class TrainerError : public Error {
public:
    using Error::Error;
};

class Trainer {
public:
    virtual ~Trainer() = default;
    /// Returns a new checkpoint whose lineage extends the base by one entry.
    /// Never modifies the base.
    virtual CheckpointHandle fine_tune(const FineTuneJob& job) = 0;
};

struct TrainingRecord {
    std::string question;
    std::string rationale;
    std::string instruction;
    bool operator==(const TrainingRecord&) const = default;
};

std::string serialize_training_data(std::span<const TrainingRecord> records);
std::vector<TrainingRecord> parse_training_data(std::string_view text);
std::vector<TrainingRecord> load_training_data(const std::filesystem::path& path);

/// Base lineage plus one entry for this dataset.
std::vector<LineageEntry> extend_lineage(const CheckpointHandle& base, const std::string& dataset_digest);

} // namespace undo::backends
