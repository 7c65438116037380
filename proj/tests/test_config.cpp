// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "support.hpp"
#include "undo/config.hpp"

using namespace undo;
using namespace undo::config;
using nlohmann::json;

TEST_CASE("empty config gives the defaults") {
    auto c = resolve_config(json::object());
    CHECK(c.resolved == default_config_json());
    CHECK(c.config.K_max == 4);
    CHECK(c.config.m == 20);
    CHECK(c.config.epochs_schedule == std::vector<int>{5, 3, 3, 3});
    CHECK(c.config.teacher.kind == backends::BackendKind::scripted_teacher);
    CHECK(c.config.student_sampling.temperature == 0.0);
    for (const auto& [key, source] : c.provenance) CHECK(source == "default");
    CHECK(c.provenance.count("toy.noise_rate") == 1);
}

TEST_CASE("user values and overrides record their provenance") {
    auto c = resolve_config(json{{"m", 8}, {"toy", {{"gap_aware", false}}}}, {"K_max=6", "name=exp"});
    CHECK(c.config.m == 8);
    CHECK(!c.config.toy.gap_aware);
    CHECK(c.config.K_max == 6);
    CHECK(c.config.name == "exp");
    CHECK(c.provenance.at("m") == "user");
    CHECK(c.provenance.at("toy.gap_aware") == "user");
    CHECK(c.provenance.at("K_max") == "override");
    CHECK(c.provenance.at("toy.fixes_per_round") == "default");
    CHECK(provenance_json(c.provenance).at("K_max") == "override");
    CHECK_THROWS_WITH_AS(resolve_config(json::object(), {"seed=\"12\""}), doctest::Contains("seed"), Error);
}

TEST_CASE("overrides win over the user file") {
    auto c = resolve_config(json{{"m", 8}}, {"m=3", "toy.noise_rate=0.25"});
    CHECK(c.config.m == 3);
    CHECK(c.config.toy.noise_rate == 0.25);
    CHECK(c.provenance.at("m") == "override");
}

TEST_CASE("unknown keys and bad values are rejected by name") {
    CHECK_THROWS_WITH_AS(resolve_config(json{{"epoch", 3}}), doctest::Contains("epoch"), Error);
    CHECK_THROWS_WITH_AS(resolve_config(json{{"toy", {{"speed", 1}}}}), doctest::Contains("toy.speed"), Error);
    CHECK_THROWS_WITH_AS(resolve_config(json::object(), {"nope=1"}), doctest::Contains("nope"), Error);
    CHECK_THROWS_WITH_AS(resolve_config(json{{"K_max", "four"}}), doctest::Contains("K_max"), Error);
    CHECK_THROWS_WITH_AS(resolve_config(json{{"K_max", 0}}), doctest::Contains("K_max"), Error);
    CHECK_THROWS_WITH_AS(resolve_config(json{{"epochs_schedule", json::array()}}), doctest::Contains("epochs_schedule"),
                         Error);
    CHECK_THROWS_WITH_AS(resolve_config(json{{"init_student", "random"}}), doctest::Contains("init_student"), Error);
    CHECK_THROWS_AS(resolve_config(json::array()), Error);
    CHECK_THROWS_AS(resolve_config(json::object(), {"no-equals-sign"}), Error);
}

TEST_CASE("http backends need an endpoint") {
    CHECK_THROWS_AS(resolve_config(json{{"teacher", {{"kind", "http"}}}}), Error);
    auto c = resolve_config(json{{"teacher", {{"kind", "http"}, {"endpoint", "http://localhost:8000/v1"}}}});
    CHECK(c.config.teacher.endpoint == "http://localhost:8000/v1");
    CHECK(c.config.teacher.role == backends::Role::teacher);
}

TEST_CASE("epochs schedule repeats its last entry") {
    RunConfig c;
    CHECK(c.epochs_for_round(1) == 5);
    CHECK(c.epochs_for_round(4) == 3);
    CHECK(c.epochs_for_round(9) == 3);
    c.epochs_schedule = {10};
    CHECK(c.epochs_for_round(1) == 10);
    CHECK(c.epochs_for_round(3) == 10);
    CHECK_THROWS(c.epochs_for_round(0));
}

TEST_CASE("free-form trainer hyperparameters") {
    auto c = resolve_config(json{{"trainer", {{"hyper", {{"lr", "2e-5"}, {"lora_r", "16"}}}}}});
    CHECK(c.config.trainer.hyper.at("lr") == "2e-5");
    CHECK(c.config.trainer.hyper.size() == 2);
}

TEST_CASE("config files load and the resolved document round-trips") {
    test::TempDir dir("config");
    write_file_atomic(dir / "c.json", R"({"name": "toy", "test_suites": [{"name": "gsm8k", "path": "g.jsonl"}]})");
    auto c = load_config(dir / "c.json", {"patience=2"});
    CHECK(c.config.name == "toy");
    REQUIRE(c.config.test_suites.size() == 1);
    CHECK(c.config.test_suites[0].path == "g.jsonl");
    CHECK(c.config.patience == 2);
    auto again = config_from_json(c.resolved);
    CHECK(again.name == "toy");
    CHECK(again.patience == 2);

    write_file_atomic(dir / "bad.json", "{not json");
    CHECK_THROWS_WITH_AS(load_config(dir / "bad.json"), doctest::Contains("bad.json"), Error);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
}
