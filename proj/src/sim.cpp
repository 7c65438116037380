// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace undo::sim {

using nlohmann::json;

namespace {

void check_same_support(const Categorical& p, const Categorical& q) {
    p.validate();
    q.validate();
    if (p.support != q.support) throw Error("distributions are over different supports");
}

std::vector<TrajectoryPoint> simulate(const ToyScenario& scenario, int K, bool gap_aware) {
    scenario.validate();
    if (K < 0) throw Error("K must be >= 0");
    std::vector<Categorical> students;
    for (const auto& q : scenario.questions) students.push_back(Categorical::make(q.support, q.student));

    std::vector<TrajectoryPoint> out;
    for (int k = 1; k <= K; ++k) {
        std::vector<std::string> labels(scenario.questions.size(), "default");
        if (gap_aware) {
            size_t focused = 0;
            for (size_t i = 0; i < scenario.questions.size(); ++i) {
                if (is_correct(scenario.questions[i], students[i])) {
                    labels[i] = "correct";
                } else if (focused < scenario.focus_per_round) {
                    labels[i] = "focus";
                    ++focused;
                } else {
                    labels[i] = "incorrect";
                }
            }
        }
        std::vector<double> kls;
        for (size_t i = 0; i < scenario.questions.size(); ++i) {
            auto target = teacher_for(scenario.questions[i], labels[i]);
            students[i] = geometric_update(students[i], target, scenario.fit_strength);
            double kl;
            try {
                kl = exact_kl(target, students[i]);
            } catch (const InfiniteDivergence&) {
                kl = std::numeric_limits<double>::infinity();
            }
            kls.push_back(kl);
        }
        size_t correct = 0;
        for (size_t i = 0; i < scenario.questions.size(); ++i) correct += is_correct(scenario.questions[i], students[i]);
        double accuracy = scenario.questions.empty() ? 0.0 : static_cast<double>(correct) / scenario.questions.size();
        for (size_t i = 0; i < scenario.questions.size(); ++i)
            out.push_back({k, scenario.questions[i].id, kls[i], accuracy});
    }
    return out;
}

} // namespace

Categorical Categorical::make(std::vector<std::string> support, std::vector<double> probs) {
    Categorical c{std::move(support), std::move(probs)};
    c.validate();
    return c;
}

void Categorical::validate() const {
    if (support.size() != probs.size())
        throw Error(fmt::format("support has {} outcomes but {} probabilities", support.size(), probs.size()));
    if (probs.empty()) throw Error("categorical distribution is empty");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw Error(fmt::format("invalid probability {}", p));
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw Error(fmt::format("probabilities sum to {:.17g}, not 1", total));
}

double exact_kl(const Categorical& p, const Categorical& q) {
    check_same_support(p, q);
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p.probs[i] == 0.0) continue;
        if (q.probs[i] == 0.0)
            throw InfiniteDivergence(fmt::format("q is zero on '{}' where p has mass {}", p.support[i], p.probs[i]));
        kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
    }
    return kl;
}

double cross_entropy(const Categorical& p, const Categorical& q) {
    check_same_support(p, q);
    double h = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p.probs[i] == 0.0) continue;
        if (q.probs[i] == 0.0)
            throw InfiniteDivergence(fmt::format("q is zero on '{}' where p has mass {}", p.support[i], p.probs[i]));
        h -= p.probs[i] * std::log(q.probs[i]);
    }
    return h;
}

double entropy(const Categorical& p) {
    p.validate();
    double h = 0.0;
    for (double x : p.probs) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

double empirical_nll(std::span<const std::string> samples, const Categorical& q) {
    q.validate();
    if (samples.empty()) throw Error("empirical NLL needs at least one sample");
    std::map<std::string, double> mass;
    for (size_t i = 0; i < q.size(); ++i) mass[q.support[i]] = q.probs[i];
    double total = 0.0;
    for (const auto& s : samples) {
        auto it = mass.find(s);
        if (it == mass.end()) throw Error(fmt::format("sample '{}' is outside the support", s));
        if (it->second == 0.0) throw InfiniteDivergence(fmt::format("sample '{}' has zero mass", s));
        total -= std::log(it->second);
    }
    return total / static_cast<double>(samples.size());
}

double kl_nll_identity_check(const Categorical& p, const Categorical& q) {
    return std::abs((cross_entropy(p, q) - entropy(p)) - exact_kl(p, q));
}

std::vector<std::string> sample(const Categorical& p, size_t n, std::mt19937_64& rng) {
    p.validate();
    std::discrete_distribution<size_t> dist(p.probs.begin(), p.probs.end());
    std::vector<std::string> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(p.support[dist(rng)]);
    return out;
}

Categorical random_categorical(size_t n, std::mt19937_64& rng) {
    if (n == 0) throw Error("support must be non-empty");
    std::exponential_distribution<double> exp(1.0);
    std::vector<double> w(n);
    for (auto& x : w) x = exp(rng);
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<std::string> support;
    for (size_t i = 0; i < n; ++i) {
        w[i] /= total;
        support.push_back(fmt::format("o{}", i));
    }
    // Push the rounding residue into the largest entry so the sum is 1.
    double sum = std::accumulate(w.begin(), w.end(), 0.0);
    *std::max_element(w.begin(), w.end()) += 1.0 - sum;
    return Categorical::make(std::move(support), std::move(w));
}

Categorical geometric_update(const Categorical& s, const Categorical& t, double alpha) {
    check_same_support(s, t);
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(fmt::format("step {} is outside [0, 1]", alpha));
    std::vector<double> log_w(s.size(), -std::numeric_limits<double>::infinity());
    double max_log = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < s.size(); ++i) {
        bool s_zero = s.probs[i] == 0.0 && alpha < 1.0;
        bool t_zero = t.probs[i] == 0.0 && alpha > 0.0;
        if (s_zero || t_zero) continue;
        double ls = alpha < 1.0 ? (1.0 - alpha) * std::log(s.probs[i]) : 0.0;
        double lt = alpha > 0.0 ? alpha * std::log(t.probs[i]) : 0.0;
        log_w[i] = ls + lt;
        max_log = std::max(max_log, log_w[i]);
    }
    if (!std::isfinite(max_log)) throw Error("student and target have disjoint supports");
    std::vector<double> w(s.size());
    double total = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        w[i] = std::isfinite(log_w[i]) ? std::exp(log_w[i] - max_log) : 0.0;
        total += w[i];
    }
    for (auto& x : w) x /= total;
    double sum = std::accumulate(w.begin(), w.end(), 0.0);
    *std::max_element(w.begin(), w.end()) += 1.0 - sum;
    return Categorical::make(s.support, std::move(w));
}

void ToyScenario::validate() const {
    if (!(fit_strength > 0.0 && fit_strength <= 1.0)) throw Error("fit_strength must be in (0, 1]");
    std::set<std::string> ids;
    for (const auto& q : questions) {
        if (!ids.insert(q.id).second) throw Error(fmt::format("duplicate scenario question '{}'", q.id));
        auto student = Categorical::make(q.support, q.student);
        for (double p : student.probs) {
            if (p <= 0.0) throw Error(fmt::format("question '{}': student probabilities must be positive", q.id));
        }
        for (const auto& c : q.correct) {
            if (std::find(q.support.begin(), q.support.end(), c) == q.support.end())
                throw Error(fmt::format("question '{}': correct outcome '{}' is not in the support", q.id, c));
        }
        if (!q.teacher.contains("default")) throw Error(fmt::format("question '{}' has no default teacher", q.id));
        for (const auto& [label, probs] : q.teacher) {
            if (label != "focus" && label != "incorrect" && label != "correct" && label != "default")
                throw Error(fmt::format("question '{}': unknown gap summary '{}'", q.id, label));
            auto t = Categorical::make(q.support, probs);
            double on_correct = 0.0;
            for (size_t i = 0; i < t.size(); ++i) on_correct += q.correct.contains(t.support[i]) ? t.probs[i] : 0.0;
            if (on_correct <= 0.0)
                throw Error(fmt::format("question '{}': teacher '{}' puts no mass on a correct outcome", q.id, label));
        }
    }
}

ToyScenario scenario_from_json(const json& j) {
    ToyScenario s;
    for (const auto& [k, v] : j.items()) {
        if (k != "questions" && k != "fit_strength" && k != "focus_per_round")
            throw Error(fmt::format("unknown scenario key '{}'", k));
    }
    s.fit_strength = j.value("fit_strength", 1.0);
    s.focus_per_round = j.value("focus_per_round", size_t{1});
    for (const auto& qj : j.at("questions")) {
        ScenarioQuestion q;
        q.id = qj.at("id").get<std::string>();
        q.support = qj.at("support").get<std::vector<std::string>>();
        for (const auto& c : qj.at("correct")) q.correct.insert(c.get<std::string>());
        q.student = qj.at("student").get<std::vector<double>>();
        for (const auto& [label, probs] : qj.at("teacher").items()) q.teacher[label] = probs.get<std::vector<double>>();
        s.questions.push_back(std::move(q));
    }
    s.validate();
    return s;
}

ToyScenario load_scenario(const std::filesystem::path& path) { return scenario_from_json(json::parse(read_file(path))); }

bool is_correct(const ScenarioQuestion& q, const Categorical& student) {
    double mass = 0.0;
    for (size_t i = 0; i < student.size(); ++i) {
        if (q.correct.contains(student.support[i])) mass += student.probs[i];
    }
    return mass >= 0.5;
}

Categorical teacher_for(const ScenarioQuestion& q, const std::string& summary) {
    std::vector<std::string> chain;
    if (summary == "focus") chain = {"focus", "incorrect", "default"};
    else if (summary == "incorrect") chain = {"incorrect", "default"};
    else if (summary == "correct") chain = {"correct", "default"};
    else chain = {"default"};
    for (const auto& label : chain) {
        if (auto it = q.teacher.find(label); it != q.teacher.end()) return Categorical::make(q.support, it->second);
    }
    throw Error(fmt::format("question '{}' has no teacher for '{}'", q.id, summary));
}

std::vector<TrajectoryPoint> simulate_undo(const ToyScenario& scenario, int K) { return simulate(scenario, K, true); }

std::vector<TrajectoryPoint> simulate_standard(const ToyScenario& scenario, int K) {
    return simulate(scenario, K, false);
}

std::string trajectory_csv(std::span<const TrajectoryPoint> points) {
    std::string out = "iteration,question,kl,accuracy\n";
    for (const auto& p : points) {
        std::string kl = std::isinf(p.kl) ? "inf" : fmt::format("{:.12g}", p.kl);
        out += fmt::format("{},{},{},{:.6g}\n", p.iteration, p.question, kl, p.accuracy);
    }
    return out;
}

} // namespace undo::sim
