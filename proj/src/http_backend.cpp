// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/http_backend.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <ctime>
#include <random>
#include <regex>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace undo::backends {

using nlohmann::json;

namespace {

std::unique_ptr<httplib::Client> make_client(const std::string& base, std::chrono::milliseconds timeout) {
    auto client = std::make_unique<httplib::Client>(base);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());
    return client;
}

// Pulls a human-readable message out of an error body, whatever its shape.
std::string error_message(const std::string& body) {
    try {
        auto j = json::parse(body);
        if (j.contains("error")) {
            const auto& e = j.at("error");
            if (e.is_string()) return e.get<std::string>();
            if (e.is_object() && e.contains("message")) return e.at("message").get<std::string>();
            return e.dump();
        }
        if (j.contains("detail")) return j.at("detail").is_string() ? j.at("detail").get<std::string>() : j.at("detail").dump();
        if (j.contains("message")) return j.at("message").get<std::string>();
    } catch (const std::exception&) {
    }
    return trim(body);
}

bool mentions_context_overflow(const std::string& body) {
    std::string lower = to_lower(body);
    for (std::string_view marker : {"context_length_exceeded", "context length", "maximum context", "context window",
                                    "prompt is too long", "too many tokens"}) {
        if (lower.find(marker) != std::string::npos) return true;
    }
    return false;
}

std::chrono::milliseconds backoff(const RetryPolicy& policy, int attempt) {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double ms = static_cast<double>(policy.base_delay.count()) * static_cast<double>(1LL << (attempt - 1)) *
                (1.0 + policy.jitter * u);
    return std::chrono::milliseconds(static_cast<int64_t>(ms));
}

} // namespace

std::pair<std::string, std::string> split_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw Error(fmt::format("invalid endpoint URL '{}'", url));
    std::string prefix = m[2].matched ? m[2].str() : "";
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {m[1].str(), prefix};
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

HttpGenerator::HttpGenerator(BackendHandle handle, HttpOptions options)
    : handle_(std::move(handle)), options_(std::move(options)) {
    handle_.validate();
    if (handle_.kind != BackendKind::http) throw Error("HttpGenerator needs a backend of kind http");
    if (options_.retry.attempts < 1) throw Error("retry attempts must be >= 1");
    std::tie(base_, prefix_) = split_url(*handle_.endpoint);
}

json HttpGenerator::request_body(const std::string& prompt, const GenerationParams& params) const {
    json body{{"model", handle_.model_name}, {"temperature", params.temperature}, {"max_tokens", params.max_tokens}};
    if (options_.chat) body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    else body["prompt"] = prompt;
    if (!params.stop.empty()) body["stop"] = params.stop;
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

std::string HttpGenerator::generate(const std::string& prompt, const GenerationParams& params) {
    params.validate();
    const std::string path = prefix_ + (options_.chat ? "/chat/completions" : "/completions");
    const std::string body = request_body(prompt, params).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(options_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", fmt::format("Bearer {}", key));

    std::string last_error;
    int last_status = 0;
    for (int attempt = 1; attempt <= options_.retry.attempts; ++attempt) {
        if (attempt > 1) std::this_thread::sleep_for(backoff(options_.retry, attempt - 1));
        auto client = make_client(base_, options_.timeout);
        auto res = client->Post(path, headers, body, "application/json");
        if (!res) {
            last_status = 0;
            last_error = fmt::format("{} {}: {}", base_, path, httplib::to_string(res.error()));
            spdlog::debug("generation attempt {} failed: {}", attempt, last_error);
            continue;
        }
        if (res->status >= 500 || res->status == 429) {
            last_status = res->status;
            last_error = error_message(res->body);
            spdlog::debug("generation attempt {} got {}: {}", attempt, res->status, last_error);
            continue;
        }
        if (res->status >= 400) {
            if (mentions_context_overflow(res->body)) throw ContextOverflowError(error_message(res->body));
            throw ServerError(res->status, error_message(res->body));
        }
        json j;
        try {
            j = json::parse(res->body);
        } catch (const json::parse_error&) {
            throw ServerError(res->status, "response is not JSON");
        }
        if (j.contains("error")) throw ServerError(res->status, error_message(res->body));
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
            throw ServerError(res->status, "response has no choices");
        const auto& choice = j["choices"][0];
        if (options_.chat) {
            if (!choice.contains("message") || !choice["message"].contains("content"))
                throw ServerError(res->status, "chat response has no message content");
            return choice["message"]["content"].get<std::string>();
        }
        if (!choice.contains("text")) throw ServerError(res->status, "completion response has no text");
        return choice["text"].get<std::string>();
    }
    if (last_status != 0) throw ServerError(last_status, last_error);
    throw TransportError(last_error, options_.retry.attempts);
}

HttpTrainer::HttpTrainer(std::string endpoint, TrainerPollOptions options) : options_(options) {
    std::tie(base_, prefix_) = split_url(endpoint);
}

CheckpointHandle HttpTrainer::fine_tune(const FineTuneJob& job) {
    const std::string digest = validate_job(job);
    FineTuneJob absolute = job;
    absolute.dataset_path = std::filesystem::absolute(job.dataset_path);
    auto client = make_client(base_, options_.request_timeout);
    auto res = client->Post(prefix_ + "/finetune", job_payload(absolute).dump(), "application/json");
    if (!res) throw TrainerError(fmt::format("trainer unreachable at {}: {}", base_, httplib::to_string(res.error())));
    if (res->status >= 400) throw TrainerError(fmt::format("trainer rejected job: {}", error_message(res->body)));
    std::string id;
    try {
        id = json::parse(res->body).at("checkpoint_id").get<std::string>();
    } catch (const std::exception&) {
        throw TrainerError(fmt::format("trainer response lacks checkpoint_id: {}", res->body));
    }

    const auto start = std::chrono::steady_clock::now();
    for (;;) {
        auto status = client->Get(fmt::format("{}/status/{}", prefix_, id));
        if (status && status->status < 400) {
            json j = json::parse(status->body, nullptr, false);
            std::string state = j.is_object() ? j.value("state", "") : "";
            std::string detail;
            if (j.is_object() && j.contains("detail"))
                detail = j["detail"].is_string() ? j["detail"].get<std::string>() : j["detail"].dump();
            if (state == "done") return CheckpointHandle{id, extend_lineage(job.base, digest), utc_timestamp()};
            if (state == "failed") throw TrainerError(fmt::format("fine-tune job {} failed: {}", id, detail));
            if (state != "pending" && state != "running")
                throw TrainerError(fmt::format("trainer reported unknown state '{}' for job {}", state, id));
        } else if (status && status->status == 404) {
            throw TrainerError(fmt::format("trainer does not know job {}", id));
        } else {
            spdlog::warn("status poll for job {} failed; retrying", id);
        }
        if (std::chrono::steady_clock::now() - start >= options_.deadline)
            throw TrainerError(fmt::format("fine-tune job {} timed out after {} ms", id, options_.deadline.count()));
        std::this_thread::sleep_for(options_.poll_interval);
    }
}

CommandTrainer::CommandTrainer(std::string command, std::chrono::milliseconds deadline)
    : command_(std::move(command)), deadline_(deadline) {
    if (command_.empty()) throw Error("trainer command is empty");
}

CheckpointHandle CommandTrainer::fine_tune(const FineTuneJob& job) {
    const std::string digest = validate_job(job);
    FineTuneJob absolute = job;
    absolute.dataset_path = std::filesystem::absolute(job.dataset_path);
    const std::string payload = job_payload(absolute).dump() + "\n";

    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw TrainerError("pipe() failed");
    pid_t pid = fork();
    if (pid < 0) throw TrainerError("fork() failed");
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    // A child that exits without reading stdin must not kill us with SIGPIPE.
    struct sigaction ignore {}, previous {};
    ignore.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &ignore, &previous);
    size_t written = 0;
    while (written < payload.size()) {
        ssize_t n = write(in_pipe[1], payload.data() + written, payload.size() - written);
        if (n <= 0) break;
        written += static_cast<size_t>(n);
    }
    close(in_pipe[1]);
    sigaction(SIGPIPE, &previous, nullptr);

    std::string output;
    const auto start = std::chrono::steady_clock::now();
    bool timed_out = false;
    char buf[4096];
    for (;;) {
        auto left = deadline_ - std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
        if (left.count() <= 0) {
            timed_out = true;
            break;
        }
        pollfd pfd{out_pipe[0], POLLIN, 0};
        int ready = poll(&pfd, 1, static_cast<int>(std::min<int64_t>(left.count(), 1000)));
        if (ready < 0 && errno == EINTR) continue;
        if (ready <= 0) continue;
        ssize_t n = read(out_pipe[0], buf, sizeof buf);
        if (n <= 0) break;
        output.append(buf, static_cast<size_t>(n));
    }
    close(out_pipe[0]);
    if (timed_out) kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    if (timed_out) throw TrainerError(fmt::format("trainer command timed out after {} ms", deadline_.count()));

    json j = json::parse(trim(output), nullptr, false);
    std::string detail;
    if (j.is_object() && j.contains("detail"))
        detail = j["detail"].is_string() ? j["detail"].get<std::string>() : j["detail"].dump();
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw TrainerError(fmt::format("trainer command exited with status {}: {}",
                                       WIFEXITED(status) ? WEXITSTATUS(status) : -1,
                                       detail.empty() ? trim(output) : detail));
    }
    if (!j.is_object()) throw TrainerError(fmt::format("trainer command printed invalid JSON: {}", trim(output)));
    std::string state = j.value("state", "done");
    if (state == "failed") throw TrainerError(fmt::format("trainer command failed the job: {}", detail));
    if (!j.contains("checkpoint_id") || !j["checkpoint_id"].is_string())
        throw TrainerError("trainer command output lacks checkpoint_id");
    return CheckpointHandle{j["checkpoint_id"].get<std::string>(), extend_lineage(job.base, digest), utc_timestamp()};
}

} // namespace undo::backends
