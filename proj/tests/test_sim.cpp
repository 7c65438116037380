// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "undo/sim.hpp"

using namespace undo;
using namespace undo::sim;

namespace {

Categorical two(double a) { return Categorical::make({"x", "y"}, {a, 1.0 - a}); }

// Accuracy after each round, one entry per round.
std::vector<double> accuracies(const std::vector<TrajectoryPoint>& points) {
    std::vector<double> out;
    for (const auto& p : points) {
        if (out.size() < static_cast<size_t>(p.iteration)) out.push_back(p.accuracy);
    }
    return out;
}

ToyScenario three_questions() { return load_scenario(test::data_dir() / "fixtures/sim_three_questions.json"); }

} // namespace

TEST_CASE("hand-derived KL values") {
    // 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
    double oracle = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(exact_kl(two(0.5), two(0.25)) == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(std::abs(exact_kl(two(0.5), two(0.25)) - 0.1438) < 1e-4);
    CHECK(std::abs(exact_kl(two(1.0), two(0.5)) - std::log(2.0)) < 1e-12);
    CHECK(exact_kl(two(0.3), two(0.3)) == 0.0);
    CHECK_THROWS_AS(exact_kl(two(0.5), two(1.0)), InfiniteDivergence);
    CHECK(exact_kl(two(1.0), two(1.0)) == 0.0);
    CHECK_THROWS_AS(exact_kl(two(0.5), Categorical::make({"x", "z"}, {0.5, 0.5})), Error);
}

TEST_CASE("categorical validation") {
    CHECK_THROWS(Categorical::make({"a"}, {0.5}));
    CHECK_THROWS(Categorical::make({"a", "b"}, {1.0}));
    CHECK_THROWS(Categorical::make({"a", "b"}, {1.5, -0.5}));
    CHECK_THROWS(Categorical::make({}, {}));
    CHECK_NOTHROW(Categorical::make({"a", "b", "c"}, {0.2, 0.3, 0.5}));
}

TEST_CASE("the NLL and KL identity holds over random pairs") {
    std::mt19937_64 rng(2026);
    std::uniform_int_distribution<size_t> size(1, 32);
    for (int t = 0; t < 1000; ++t) {
        size_t n = size(rng);
        auto p = random_categorical(n, rng);
        auto q = random_categorical(n, rng);
        CHECK(kl_nll_identity_check(p, q) < 1e-12);
        CHECK(exact_kl(p, q) >= 0.0);
        CHECK(exact_kl(p, p) == doctest::Approx(0.0));
    }
}

TEST_CASE("KL is positive for distinct random pairs") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 200; ++t) {
        auto p = random_categorical(5, rng);
        auto q = random_categorical(5, rng);
        CHECK(exact_kl(p, q) > 0.0);
    }
}

TEST_CASE("empirical NLL converges to the cross-entropy") {
    std::mt19937_64 rng(1);
    auto p = Categorical::make({"a", "b", "c"}, {0.5, 0.3, 0.2});
    auto q = Categorical::make({"a", "b", "c"}, {0.2, 0.5, 0.3});
    auto samples = sample(p, 100000, rng);
    CHECK(std::abs(empirical_nll(samples, q) - cross_entropy(p, q)) < 0.01);

    // Plug-in identity: samples at exactly p's frequencies.
    std::vector<std::string> exact;
    for (int i = 0; i < 5; ++i) exact.push_back("a");
    for (int i = 0; i < 3; ++i) exact.push_back("b");
    for (int i = 0; i < 2; ++i) exact.push_back("c");
    CHECK(empirical_nll(exact, q) == doctest::Approx(cross_entropy(p, q)).epsilon(1e-14));
    CHECK_THROWS(empirical_nll(std::vector<std::string>{"zzz"}, q));
}

TEST_CASE("entropy examples") {
    CHECK(entropy(two(0.5)) == doctest::Approx(std::log(2.0)));
    CHECK(entropy(two(1.0)) == 0.0);
}

TEST_CASE("geometric update endpoints and monotone approach") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        auto s = random_categorical(6, rng);
        auto target = random_categorical(6, rng);
        auto at0 = geometric_update(s, target, 0.0);
        auto at1 = geometric_update(s, target, 1.0);
        for (size_t i = 0; i < 6; ++i) {
            CHECK(at0.probs[i] == doctest::Approx(s.probs[i]));
            CHECK(at1.probs[i] == doctest::Approx(target.probs[i]));
        }
        double before = exact_kl(target, s);
        double prev = before;
        for (double a : {0.1, 0.3, 0.5, 0.8, 1.0}) {
            double kl = exact_kl(target, geometric_update(s, target, a));
            CHECK(kl <= prev + 1e-12);
            prev = kl;
        }
    }
    CHECK_THROWS(geometric_update(two(0.5), two(0.5), 1.5));
}

TEST_CASE("full projection makes every question correct in one round") {
    auto s = three_questions();
    for (auto& q : s.questions) q.teacher = {{"default", {0.9, 0.1}}};
    auto points = simulate_undo(s, 1);
    REQUIRE(points.size() == 3);
    for (const auto& p : points) {
        CHECK(p.kl == doctest::Approx(0.0));
        CHECK(p.accuracy == 1.0);
    }
}

TEST_CASE("three-question scenario fixes one question per round") {
    auto s = three_questions();
    auto undo = accuracies(simulate_undo(s, 5));
    REQUIRE(undo.size() == 5);
    CHECK(undo[0] == doctest::Approx(1.0 / 3.0));
    CHECK(undo[1] == doctest::Approx(2.0 / 3.0));
    CHECK(undo[2] == doctest::Approx(1.0));
    CHECK(undo[3] == doctest::Approx(1.0));
    CHECK(undo[4] == doctest::Approx(1.0));

    auto standard = accuracies(simulate_standard(s, 5));
    for (double a : standard) CHECK(a == 0.0);
}

TEST_CASE("when the gap does not matter UNDO equals standard distillation") {
    auto s = three_questions();
    for (auto& q : s.questions) q.teacher = {{"default", q.teacher.at("default")}};
    s.fit_strength = 0.4;
    auto a = simulate_undo(s, 4);
    auto b = simulate_standard(s, 4);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].kl == b[i].kl);
        CHECK(a[i].accuracy == b[i].accuracy);
    }
}

TEST_CASE("scenario validation") {
    auto j = test::load_json("fixtures/sim_three_questions.json");
    auto bad = j;
    bad["fit_strength"] = 0.0;
    CHECK_THROWS(scenario_from_json(bad));
    bad = j;
    bad["questions"][0]["teacher"].erase("default");
    CHECK_THROWS(scenario_from_json(bad));
    bad = j;
    bad["questions"][0]["student"] = {1.0, 0.0};
    CHECK_THROWS(scenario_from_json(bad));
    bad = j;
    bad["extra"] = 1;
    CHECK_THROWS(scenario_from_json(bad));
}

TEST_CASE("teacher fallback chain") {
    auto s = three_questions();
    const auto& q = s.questions[0];
    CHECK(teacher_for(q, "focus").probs[0] == 0.9);
    CHECK(teacher_for(q, "incorrect").probs[0] == 0.1);
    CHECK(teacher_for(q, "correct").probs[0] == 0.9);
    CHECK(is_correct(q, Categorical::make(q.support, {0.5, 0.5})));
    CHECK(!is_correct(q, Categorical::make(q.support, q.student)));
}

TEST_CASE("trajectory CSV") {
    auto csv = trajectory_csv(simulate_undo(three_questions(), 2));
    auto lines = split_lines(csv);
    CHECK(lines[0] == "iteration,question,kl,accuracy");
    CHECK(lines.size() == 7);
    CHECK(lines[1].starts_with("1,q1,"));
}
