// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>

#include "undo/backends.hpp"

namespace undo::backends {

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{500};
    /// Each wait is base_delay * 2^(attempt-1) * (1 + jitter * u), u in [0,1).
    double jitter = 0.5;
};

struct HttpOptions {
    RetryPolicy retry;
    std::chrono::milliseconds timeout{120000};
    /// Use /chat/completions with a single user message instead of
    /// /completions.
    bool chat = false;
    /// Environment variable holding the bearer token. Unset or empty means no
    /// Authorization header.
    std::string api_key_env = "UNDO_API_KEY";
};

/// Client for OpenAI-compatible completion servers. The endpoint is the API
/// base URL, e.g. "http://localhost:8000/v1". Transport failures and 5xx/429
/// responses are retried with the same request body.
class HttpGenerator : public Generator {
public:
    HttpGenerator(BackendHandle handle, HttpOptions options = {});
    std::string generate(const std::string& prompt, const GenerationParams& params) override;

    /// The request body `generate` sends.
    nlohmann::json request_body(const std::string& prompt, const GenerationParams& params) const;

private:
    BackendHandle handle_;
    HttpOptions options_;
    std::string base_;
    std::string prefix_;
};

struct TrainerPollOptions {
    std::chrono::milliseconds poll_interval{2000};
    std::chrono::milliseconds deadline{std::chrono::hours(24)};
    std::chrono::milliseconds request_timeout{30000};
};

/// Drives a trainer over HTTP: POST {endpoint}/finetune, then polls
/// GET {endpoint}/status/{id} until the job is done or failed.
class HttpTrainer : public Trainer {
public:
    HttpTrainer(std::string endpoint, TrainerPollOptions options = {});
    CheckpointHandle fine_tune(const FineTuneJob& job) override;

private:
    std::string base_;
    std::string prefix_;
    TrainerPollOptions options_;
};

/// Runs a shell command per job with the payload on stdin. The command prints
/// {"checkpoint_id": ..., "state": "done"|"failed", "detail": ...} on stdout.
class CommandTrainer : public Trainer {
public:
    CommandTrainer(std::string command, std::chrono::milliseconds deadline = std::chrono::hours(24));
    CheckpointHandle fine_tune(const FineTuneJob& job) override;

private:
    std::string command_;
    std::chrono::milliseconds deadline_;
};

/// Splits "http://host:port/path" into ("http://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url);

/// UTC "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

} // namespace undo::backends
