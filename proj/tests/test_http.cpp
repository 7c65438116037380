// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "undo/http_backend.hpp"

using namespace undo;
using namespace undo::backends;
using nlohmann::json;

namespace {

// A local server on an ephemeral port, stopped on destruction.
class MockServer {
public:
    MockServer() {
        port_ = server.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~MockServer() {
        server.stop();
        thread_.join();
    }
    std::string url(std::string_view path = "/v1") const { return fmt::format("http://127.0.0.1:{}{}", port_, path); }

    httplib::Server server;

private:
    int port_ = 0;
    std::thread thread_;
};

BackendHandle handle(const std::string& endpoint) {
    return {BackendKind::http, endpoint, "test-model", Role::teacher};
}

HttpOptions fast(int attempts = 3) {
    HttpOptions o;
    o.retry.attempts = attempts;
    o.retry.base_delay = std::chrono::milliseconds(1);
    o.timeout = std::chrono::milliseconds(2000);
    return o;
}

FineTuneJob sample_job(const std::filesystem::path& dir) {
    std::vector<TrainingRecord> recs = {{"q", "r\nFinal Answer: 1", ""}};
    write_file_atomic(dir / "data.jsonl", serialize_training_data(recs));
    FineTuneJob job;
    job.base = {"base", {}, ""};
    job.dataset_path = dir / "data.jsonl";
    job.epochs = 2;
    return job;
}

TrainerPollOptions quick_poll() {
    TrainerPollOptions o;
    o.poll_interval = std::chrono::milliseconds(5);
    o.deadline = std::chrono::milliseconds(3000);
    o.request_timeout = std::chrono::milliseconds(2000);
    return o;
}

} // namespace

TEST_CASE("completion request carries model, prompt and sampling") {
    MockServer mock;
    json seen;
    std::string auth;
    mock.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"text":" 12"}]})", "application/json");
    });
    ::setenv("UNDO_TEST_KEY", "sekrit", 1);
    auto opts = fast();
    opts.api_key_env = "UNDO_TEST_KEY";
    HttpGenerator gen(handle(mock.url()), opts);
    GenerationParams p;
    p.temperature = 0.0;
    p.max_tokens = 32;
    p.seed = 9;
    CHECK(gen.generate("7+5=", p) == " 12");
    CHECK(seen.at("model") == "test-model");
    CHECK(seen.at("prompt") == "7+5=");
    CHECK(seen.at("temperature") == 0.0);
    CHECK(seen.at("max_tokens") == 32);
    CHECK(seen.at("seed") == 9);
    CHECK(auth == "Bearer sekrit");
    ::unsetenv("UNDO_TEST_KEY");
}

TEST_CASE("chat mode sends one user message") {
    MockServer mock;
    json seen;
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"hi"}}]})", "application/json");
    });
    auto opts = fast();
    opts.chat = true;
    HttpGenerator gen(handle(mock.url()), opts);
    CHECK(gen.generate("hello", {}) == "hi");
    CHECK(seen.at("messages").size() == 1);
    CHECK(seen.at("messages")[0].at("content") == "hello");
}

TEST_CASE("5xx responses are retried with the same body") {
    MockServer mock;
    std::mutex mu;
    std::vector<std::string> bodies;
    mock.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        bodies.push_back(req.body);
        if (bodies.size() < 3) {
            res.status = 503;
            res.set_content(R"({"error":{"message":"busy"}})", "application/json");
        } else {
            res.set_content(R"({"choices":[{"text":"ok"}]})", "application/json");
        }
    });
    HttpGenerator gen(handle(mock.url()), fast(3));
    CHECK(gen.generate("x", {}) == "ok");
    REQUIRE(bodies.size() == 3);
    CHECK(bodies[0] == bodies[2]);
}

TEST_CASE("persistent 5xx surfaces as a server error after all attempts") {
    MockServer mock;
    std::atomic<int> calls{0};
    mock.server.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 500;
        res.set_content(R"({"error":{"message":"model crashed"}})", "application/json");
    });
    HttpGenerator gen(handle(mock.url()), fast(2));
    try {
        gen.generate("x", {});
        FAIL("expected ServerError");
    } catch (const ServerError& e) {
        CHECK(e.status() == 500);
        CHECK(e.server_message() == "model crashed");
    }
    CHECK(calls.load() == 2);
}

TEST_CASE("4xx is not retried and context overflow is recognized") {
    MockServer mock;
    std::atomic<int> calls{0};
    mock.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        res.status = 400;
        if (json::parse(req.body).at("prompt") == "long") {
            res.set_content(R"({"error":{"message":"This model's maximum context length is 4096 tokens","code":"context_length_exceeded"}})",
                            "application/json");
        } else {
            res.set_content(R"({"error":"bad request"})", "application/json");
        }
    });
    HttpGenerator gen(handle(mock.url()), fast(3));
    CHECK_THROWS_AS(gen.generate("long", {}), ContextOverflowError);
    CHECK(calls.load() == 1);
    try {
        gen.generate("short", {});
        FAIL("expected ServerError");
    } catch (const ServerError& e) {
        CHECK(e.status() == 400);
        CHECK(e.server_message() == "bad request");
    }
}

TEST_CASE("malformed success bodies are server errors") {
    MockServer mock;
    mock.server.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json", "text/plain");
    });
    HttpGenerator gen(handle(mock.url()), fast(1));
    CHECK_THROWS_AS(gen.generate("x", {}), ServerError);
}

TEST_CASE("an unreachable endpoint is a transport error") {
    int port = 0;
    {
        MockServer closed;
        port = std::stoi(closed.url("").substr(std::string("http://127.0.0.1:").size()));
    }
    HttpGenerator gen(handle(fmt::format("http://127.0.0.1:{}/v1", port)), fast(2));
    try {
        gen.generate("x", {});
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 2);
    }
}

TEST_CASE("url splitting") {
    CHECK(split_url("http://localhost:8000/v1") == std::pair<std::string, std::string>{"http://localhost:8000", "/v1"});
    CHECK(split_url("https://api.example.com").second.empty());
    CHECK_THROWS(split_url("localhost:8000"));
    CHECK(utc_timestamp().size() == 20);
}

TEST_CASE("http trainer posts the job and polls until done") {
    MockServer mock;
    test::TempDir dir("trainer");
    json posted;
    std::atomic<int> polls{0};
    mock.server.Post("/finetune", [&](const httplib::Request& req, httplib::Response& res) {
        posted = json::parse(req.body);
        res.set_content(R"({"checkpoint_id":"ckpt-7"})", "application/json");
    });
    mock.server.Get(R"(/status/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
        CHECK(req.matches[1] == "ckpt-7");
        int n = ++polls;
        res.set_content(json{{"state", n < 3 ? "running" : "done"}}.dump(), "application/json");
    });
    auto job = sample_job(dir.path());
    HttpTrainer trainer(mock.url(""), quick_poll());
    auto ckpt = trainer.fine_tune(job);
    CHECK(ckpt.id == "ckpt-7");
    REQUIRE(ckpt.lineage.size() == 1);
    CHECK(ckpt.lineage[0].dataset_digest == sha256_hex(read_file(job.dataset_path)));
    CHECK(posted.at("base_checkpoint") == "base");
    CHECK(posted.at("epochs") == 2);
    CHECK(std::filesystem::path(posted.at("dataset_path").get<std::string>()).is_absolute());
    CHECK(polls.load() == 3);
}

TEST_CASE("http trainer failures") {
    MockServer mock;
    test::TempDir dir("trainer-fail");
    mock.server.Post("/finetune", [&](const httplib::Request& req, httplib::Response& res) {
        auto epochs = json::parse(req.body).at("epochs").get<int>();
        res.set_content(json{{"checkpoint_id", epochs == 2 ? "bad" : "ghost"}}.dump(), "application/json");
    });
    mock.server.Get(R"(/status/bad)", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"state":"failed","detail":"out of memory"})", "application/json");
    });
    mock.server.Get(R"(/status/ghost)", [&](const httplib::Request&, httplib::Response& res) { res.status = 404; });
    auto job = sample_job(dir.path());
    HttpTrainer trainer(mock.url(""), quick_poll());
    CHECK_THROWS_WITH_AS(trainer.fine_tune(job), doctest::Contains("out of memory"), TrainerError);
    job.epochs = 3;
    CHECK_THROWS_WITH_AS(trainer.fine_tune(job), doctest::Contains("ghost"), TrainerError);
}

TEST_CASE("command trainer reads the payload from stdin") {
    test::TempDir dir("cmd");
    auto job = sample_job(dir.path());
    auto script = dir / "train.sh";
    write_file_atomic(script, "#!/bin/sh\ncat > \"$(dirname \"$0\")/payload.json\"\n"
                              "echo '{\"checkpoint_id\":\"cmd-1\",\"state\":\"done\"}'\n");
    CommandTrainer trainer("sh " + script.string());
    auto ckpt = trainer.fine_tune(job);
    CHECK(ckpt.id == "cmd-1");
    CHECK(ckpt.lineage.size() == 1);
    auto payload = json::parse(read_file(dir / "payload.json"));
    CHECK(payload.at("epochs") == 2);
    CHECK(payload.at("base_checkpoint") == "base");
}

TEST_CASE("command trainer failures") {
    test::TempDir dir("cmd-fail");
    auto job = sample_job(dir.path());
    CHECK_THROWS_WITH_AS(CommandTrainer("echo '{\"state\":\"failed\",\"detail\":\"nan loss\"}'").fine_tune(job),
                         doctest::Contains("nan loss"), TrainerError);
    CHECK_THROWS_WITH_AS(CommandTrainer("exit 3").fine_tune(job), doctest::Contains("3"),
                         TrainerError);
    CHECK_THROWS_AS(CommandTrainer("echo not-json").fine_tune(job), TrainerError);
    CHECK_THROWS_WITH_AS(CommandTrainer("sleep 5", std::chrono::milliseconds(200)).fine_tune(job),
                         doctest::Contains("timed out"), TrainerError);
}
