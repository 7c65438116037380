// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

// Teacher and student as finite categorical distributions over rationales.
// All logarithms are natural; quantities are in nats.

#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "undo/util.hpp"

namespace undo::sim {

struct Categorical {
    std::vector<std::string> support;
    std::vector<double> probs;

    /// Validates: same lengths, non-negative, sum to 1 within 1e-12.
    static Categorical make(std::vector<std::string> support, std::vector<double> probs);
    void validate() const;
    size_t size() const { return probs.size(); }
};

/// q is zero where p is positive.
class InfiniteDivergence : public Error {
public:
    using Error::Error;
};

/// sum p_i ln(p_i / q_i), with 0 ln(0/q) = 0.
double exact_kl(const Categorical& p, const Categorical& q);
/// -sum p_i ln q_i.
double cross_entropy(const Categorical& p, const Categorical& q);
double entropy(const Categorical& p);
/// -(1/N) sum ln q(sample).
double empirical_nll(std::span<const std::string> samples, const Categorical& q);
/// |(H(p,q) - H(p)) - KL(p||q)|.
double kl_nll_identity_check(const Categorical& p, const Categorical& q);

std::vector<std::string> sample(const Categorical& p, size_t n, std::mt19937_64& rng);
/// Uniformly random point of the simplex (Dirichlet(1,...,1)) over labels
/// "o0".."o{n-1}".
Categorical random_categorical(size_t n, std::mt19937_64& rng);

/// normalize(s^(1-alpha) * t^alpha), alpha in [0, 1].
Categorical geometric_update(const Categorical& s, const Categorical& t, double alpha);

struct ScenarioQuestion {
    std::string id;
    std::vector<std::string> support;
    std::set<std::string> correct;
    std::vector<double> student;
    /// Gap summary ("focus", "incorrect", "correct", "default") -> teacher
    /// probabilities over `support`.
    std::map<std::string, std::vector<double>> teacher;
};

struct ToyScenario {
    std::vector<ScenarioQuestion> questions;
    double fit_strength = 1.0;
    /// Failing questions (in order) the teacher concentrates on per round.
    size_t focus_per_round = 1;

    /// Throws unless every categorical is valid, the student is strictly
    /// positive, every teacher puts mass on a correct outcome, a "default"
    /// teacher exists and fit_strength is in (0, 1].
    void validate() const;
};

ToyScenario scenario_from_json(const nlohmann::json& j);
ToyScenario load_scenario(const std::filesystem::path& path);

/// Mass on correct outcomes >= 0.5.
bool is_correct(const ScenarioQuestion& q, const Categorical& student);

/// Teacher for a gap summary, falling back focus -> incorrect -> default and
/// correct -> default.
Categorical teacher_for(const ScenarioQuestion& q, const std::string& summary);

struct TrajectoryPoint {
    int iteration = 0;
    std::string question;
    /// KL(round target || updated student); +inf when the student lost
    /// support the target needs.
    double kl = 0.0;
    /// Fraction of questions correct after the round.
    double accuracy = 0.0;
};

/// Runs K rounds. Each round scores every question, labels it "focus" (the
/// first focus_per_round failing ones), "incorrect" or "correct", takes the
/// teacher for that label and moves the student toward it with
/// geometric_update(fit_strength).
std::vector<TrajectoryPoint> simulate_undo(const ToyScenario& scenario, int K);
/// Same dynamics with every question labelled "default".
std::vector<TrajectoryPoint> simulate_standard(const ToyScenario& scenario, int K);

std::string trajectory_csv(std::span<const TrajectoryPoint> points);

} // namespace undo::sim
