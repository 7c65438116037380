// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/config.hpp"

#include <fmt/format.h>

#include "undo/prompts.hpp"

namespace undo::config {

using nlohmann::json;

namespace {

// Object-valued keys whose members are user-defined.
bool free_form(const std::string& key) { return key == "trainer.hyper"; }

void record_defaults(const json& j, const std::string& prefix, std::map<std::string, std::string>& prov) {
    for (const auto& [k, v] : j.items()) {
        std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object() && !free_form(key)) record_defaults(v, key, prov);
        else prov[key] = "default";
    }
}

void merge(json& base, const json& user, const std::string& prefix, std::map<std::string, std::string>& prov,
           const std::string& source) {
    if (!user.is_object())
        throw Error(prefix.empty() ? "config must be a JSON object" : fmt::format("config key '{}' must be an object", prefix));
    for (const auto& [k, v] : user.items()) {
        std::string key = prefix.empty() ? k : prefix + "." + k;
        if (!base.contains(k)) throw Error(fmt::format("unknown config key '{}'", key));
        if (base[k].is_object() && !free_form(key)) {
            merge(base[k], v, key, prov, source);
            continue;
        }
        if (free_form(key) && !v.is_object()) throw Error(fmt::format("config key '{}' must be an object", key));
        base[k] = v;
        prov[key] = source;
    }
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);
    return v;
}

json override_object(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(fmt::format("override '{}' is not of the form key=value", assignment));
    std::string key = assignment.substr(0, eq);
    json value = parse_override_value(assignment.substr(eq + 1));
    std::vector<std::string> parts;
    for (size_t start = 0;;) {
        size_t dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json out = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) out = json{{*it, out}};
    return out;
}

template <class T>
T get(const json& j, const std::string& key) {
    const json* node = &j;
    size_t start = 0;
    for (;;) {
        size_t dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw Error(fmt::format("config is missing key '{}'", key));
        node = &node->at(part);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw Error(fmt::format("config key '{}' has the wrong type ({})", key, node->dump()));
    }
}

template <class T>
std::optional<T> get_optional(const json& j, const std::string& key) {
    auto v = get<json>(j, key);
    if (v.is_null()) return std::nullopt;
    return get<T>(j, key);
}

backends::BackendHandle handle(const json& j, const std::string& key, backends::Role role) {
    backends::BackendHandle h;
    h.kind = backends::backend_kind_from_string(get<std::string>(j, key + ".kind"));
    h.endpoint = get_optional<std::string>(j, key + ".endpoint");
    h.model_name = get<std::string>(j, key + ".model_name");
    h.role = role;
    h.validate();
    return h;
}

backends::GenerationParams sampling(const json& j, const std::string& key) {
    backends::GenerationParams p;
    p.temperature = get<double>(j, key + ".temperature");
    p.max_tokens = get<int>(j, key + ".max_tokens");
    p.stop = get<std::vector<std::string>>(j, key + ".stop");
    p.seed = get_optional<uint64_t>(j, key + ".seed");
    try {
        p.validate();
    } catch (const Error& e) {
        throw Error(fmt::format("{}: {}", key, e.what()));
    }
    return p;
}

template <class T>
void require(bool ok, const std::string& key, const T& value, std::string_view rule) {
    if (!ok) throw Error(fmt::format("config key '{}' = {} {}", key, value, rule));
}

} // namespace

int RunConfig::epochs_for_round(int k) const {
    if (k < 1) throw Error("rounds are numbered from 1");
    size_t i = std::min(static_cast<size_t>(k - 1), epochs_schedule.size() - 1);
    return epochs_schedule[i];
}

json default_config_json() {
    json sampling_teacher{{"temperature", 0.7}, {"max_tokens", 1024}, {"stop", json::array()}, {"seed", nullptr}};
    json sampling_student{{"temperature", 0.0}, {"max_tokens", 1024}, {"stop", json::array()}, {"seed", nullptr}};
    return json{
        {"name", "run"},
        {"K_max", 4},
        {"m", 20},
        {"seed", 0},
        {"patience", 1},
        {"epochs_schedule", {5, 3, 3, 3}},
        {"instruction", std::string(prompts::kDefaultInstruction)},
        {"context_budget", 26214},
        {"chars_per_token", 4.0},
        {"prune_oldest", false},
        {"teacher_retries", 0},
        {"parallelism", 4},
        {"init_student", "iteration1"},
        {"teacher", {{"kind", "scripted_teacher"}, {"endpoint", nullptr}, {"model_name", "toy-teacher"}}},
        {"student", {{"kind", "toy_student"}, {"endpoint", nullptr}, {"model_name", "toy-student"}}},
        {"sampling", {{"teacher", sampling_teacher}, {"student", sampling_student}}},
        {"trainer",
         {{"kind", "toy"},
          {"endpoint", nullptr},
          {"command", nullptr},
          {"poll_interval_ms", 2000},
          {"timeout_s", 86400},
          {"hyper", json::object()}}},
        {"base_checkpoint", "base"},
        {"test_suites", json::array()},
        {"toy",
         {{"fixes_per_round", 2}, {"gap_aware", true}, {"noise_rate", 0.0}, {"noise_seed", 0}, {"test_suite", true}}},
        {"http",
         {{"attempts", 3}, {"base_delay_ms", 500}, {"timeout_ms", 120000}, {"chat", false}, {"api_key_env", "UNDO_API_KEY"}}},
        {"templates_dir", nullptr},
    };
}

RunConfig config_from_json(const json& j) {
    // Reject keys the defaults do not know, even when handed a resolved
    // document directly (e.g. from a manifest).
    {
        json scratch = default_config_json();
        std::map<std::string, std::string> prov;
        merge(scratch, j, "", prov, "user");
    }
    RunConfig c;
    c.name = get<std::string>(j, "name");
    c.K_max = get<int>(j, "K_max");
    require(c.K_max >= 1, "K_max", c.K_max, "must be >= 1");
    c.m = get<size_t>(j, "m");
    require(c.m >= 1, "m", c.m, "must be >= 1");
    c.seed = get<uint64_t>(j, "seed");
    c.patience = get<int>(j, "patience");
    require(c.patience >= 1, "patience", c.patience, "must be >= 1");
    c.epochs_schedule = get<std::vector<int>>(j, "epochs_schedule");
    require(!c.epochs_schedule.empty(), "epochs_schedule", "[]", "must not be empty");
    for (int e : c.epochs_schedule) require(e >= 1, "epochs_schedule", e, "entries must be >= 1");
    c.instruction = get<std::string>(j, "instruction");
    c.context_budget = get<size_t>(j, "context_budget");
    require(c.context_budget > 0, "context_budget", c.context_budget, "must be > 0");
    c.chars_per_token = get<double>(j, "chars_per_token");
    require(c.chars_per_token > 0, "chars_per_token", c.chars_per_token, "must be > 0");
    c.prune_oldest = get<bool>(j, "prune_oldest");
    c.teacher_retries = get<int>(j, "teacher_retries");
    require(c.teacher_retries >= 0, "teacher_retries", c.teacher_retries, "must be >= 0");
    c.parallelism = get<size_t>(j, "parallelism");
    require(c.parallelism >= 1, "parallelism", c.parallelism, "must be >= 1");
    c.init_student = get<std::string>(j, "init_student");
    require(c.init_student == "iteration1" || c.init_student == "pretrained", "init_student", c.init_student,
            "must be iteration1 or pretrained");
    c.teacher = handle(j, "teacher", backends::Role::teacher);
    c.student = handle(j, "student", backends::Role::student);
    require(c.teacher.kind != backends::BackendKind::toy_student, "teacher.kind", "toy_student",
            "is a student backend");
    require(c.student.kind != backends::BackendKind::scripted_teacher, "student.kind", "scripted_teacher",
            "is a teacher backend");
    c.teacher_sampling = sampling(j, "sampling.teacher");
    c.student_sampling = sampling(j, "sampling.student");

    c.trainer.kind = get<std::string>(j, "trainer.kind");
    c.trainer.endpoint = get_optional<std::string>(j, "trainer.endpoint");
    c.trainer.command = get_optional<std::string>(j, "trainer.command");
    c.trainer.poll_interval_ms = get<int64_t>(j, "trainer.poll_interval_ms");
    c.trainer.timeout_s = get<int64_t>(j, "trainer.timeout_s");
    const json hyper = get<json>(j, "trainer.hyper");
    for (const auto& [k, v] : hyper.items())
        c.trainer.hyper[k] = v.is_string() ? v.get<std::string>() : v.dump();
    if (c.trainer.kind == "http") {
        require(c.trainer.endpoint.has_value(), "trainer.endpoint", "null", "is required for an http trainer");
    } else if (c.trainer.kind == "command") {
        require(c.trainer.command.has_value(), "trainer.command", "null", "is required for a command trainer");
    } else {
        require(c.trainer.kind == "toy", "trainer.kind", c.trainer.kind, "must be toy, http or command");
    }
    require((c.student.kind == backends::BackendKind::toy_student) == (c.trainer.kind == "toy"), "trainer.kind",
            c.trainer.kind, "must be toy exactly when the student is toy_student");

    c.base_checkpoint = get<std::string>(j, "base_checkpoint");
    for (const auto& s : get<json>(j, "test_suites")) {
        TestSuiteConfig t;
        if (!s.is_object() || !s.contains("name") || !s.contains("path"))
            throw Error("config key 'test_suites' entries need name and path");
        for (const auto& [k, v] : s.items()) {
            if (k != "name" && k != "path" && k != "few_shot")
                throw Error(fmt::format("unknown config key 'test_suites[].{}'", k));
        }
        t.name = s.at("name").get<std::string>();
        t.path = s.at("path").get<std::string>();
        if (s.contains("few_shot") && !s.at("few_shot").is_null()) t.few_shot = s.at("few_shot").get<std::string>();
        c.test_suites.push_back(std::move(t));
    }

    c.toy.fixes_per_round = get<size_t>(j, "toy.fixes_per_round");
    c.toy.gap_aware = get<bool>(j, "toy.gap_aware");
    c.toy.noise_rate = get<double>(j, "toy.noise_rate");
    require(c.toy.noise_rate >= 0.0 && c.toy.noise_rate <= 1.0, "toy.noise_rate", c.toy.noise_rate, "must be in [0, 1]");
    c.toy.noise_seed = get<uint64_t>(j, "toy.noise_seed");
    c.toy.test_suite = get<bool>(j, "toy.test_suite");

    c.http.attempts = get<int>(j, "http.attempts");
    require(c.http.attempts >= 1, "http.attempts", c.http.attempts, "must be >= 1");
    c.http.base_delay_ms = get<int64_t>(j, "http.base_delay_ms");
    c.http.timeout_ms = get<int64_t>(j, "http.timeout_ms");
    c.http.chat = get<bool>(j, "http.chat");
    c.http.api_key_env = get<std::string>(j, "http.api_key_env");
    c.templates_dir = get_optional<std::string>(j, "templates_dir");
    return c;
}

LoadedConfig resolve_config(const json& user, const std::vector<std::string>& overrides) {
    LoadedConfig out;
    out.resolved = default_config_json();
    record_defaults(out.resolved, "", out.provenance);
    merge(out.resolved, user, "", out.provenance, "user");
    for (const auto& o : overrides) merge(out.resolved, override_object(o), "", out.provenance, "override");
    out.config = config_from_json(out.resolved);
    return out;
}

LoadedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json user;
    try {
        user = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(fmt::format("{}: {}", path.string(), e.what()));
    }
    return resolve_config(user, overrides);
}

json provenance_json(const std::map<std::string, std::string>& provenance) {
    json out = json::object();
    for (const auto& [k, v] : provenance) out[k] = v;
    return out;
}

} // namespace undo::config
