// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "undo/backends.hpp"

namespace undo::config {

struct TrainerConfig {
    /// toy, http or command.
    std::string kind = "toy";
    std::optional<std::string> endpoint;
    std::optional<std::string> command;
    int64_t poll_interval_ms = 2000;
    int64_t timeout_s = 86400;
    std::map<std::string, std::string> hyper;
};

struct TestSuiteConfig {
    std::string name;
    std::string path;
    std::optional<std::string> few_shot;
};

struct ToyConfig {
    size_t fixes_per_round = 2;
    bool gap_aware = true;
    /// Fraction of teacher completions whose answer gets corrupted.
    double noise_rate = 0.0;
    uint64_t noise_seed = 0;
    /// Evaluate every round on the built-in toy_arith suite.
    bool test_suite = true;
};

struct HttpConfig {
    int attempts = 3;
    int64_t base_delay_ms = 500;
    int64_t timeout_ms = 120000;
    bool chat = false;
    std::string api_key_env = "UNDO_API_KEY";
};

struct RunConfig {
    std::string name = "run";
    int K_max = 4;
    size_t m = 20;
    uint64_t seed = 0;
    int patience = 1;
    std::vector<int> epochs_schedule{5, 3, 3, 3};
    std::string instruction;
    size_t context_budget = 26214;
    double chars_per_token = 4.0;
    bool prune_oldest = false;
    /// Extra teacher attempts for a question whose rationale was discarded.
    int teacher_retries = 0;
    size_t parallelism = 4;
    /// Which student writes the first "previous student" answers on training
    /// questions: "iteration1" (after baseline training) or "pretrained".
    std::string init_student = "iteration1";
    backends::BackendHandle teacher;
    backends::BackendHandle student;
    backends::GenerationParams teacher_sampling;
    backends::GenerationParams student_sampling;
    TrainerConfig trainer;
    std::string base_checkpoint = "base";
    std::vector<TestSuiteConfig> test_suites;
    ToyConfig toy;
    HttpConfig http;
    std::optional<std::string> templates_dir;

    /// Epochs for round k (1-based); the last schedule entry repeats.
    int epochs_for_round(int k) const;
};

/// The full default configuration as JSON. Every accepted key appears here.
nlohmann::json default_config_json();

struct LoadedConfig {
    RunConfig config;
    /// Defaults merged with the user file and overrides.
    nlohmann::json resolved;
    /// Dotted key -> "default", "user" or "override".
    std::map<std::string, std::string> provenance;
};

/// Merges `user` and then `overrides` ("dotted.key=value"; value parsed as
/// JSON when it parses, else taken as a string) over the defaults. Unknown
/// keys and ill-typed values throw, naming the key.
LoadedConfig resolve_config(const nlohmann::json& user, const std::vector<std::string>& overrides = {});
LoadedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Strict typed view of a resolved configuration.
RunConfig config_from_json(const nlohmann::json& resolved);

nlohmann::json provenance_json(const std::map<std::string, std::string>& provenance);

} // namespace undo::config
