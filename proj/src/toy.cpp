// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/toy.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <ctime>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "undo/grade.hpp"

namespace undo::toy {

using nlohmann::json;

namespace {

struct Numbers {
    int64_t a, b, c;
};

// Eight numbers per skill: the first five build the training corpus, the
// last three the test suite. Every method yields an integer.
Numbers numbers_for(size_t skill, int64_t i) {
    switch (skill) {
    case 0: return {12 + 7 * i, 5 + 3 * i, 0};
    case 1: return {40 + 9 * i, 7 + 2 * i, 0};
    case 2: return {3 + i, 6 + 2 * i, 0};
    case 3: return {(2 + i) * (4 + 3 * i), 2 + i, 0};
    case 4: return {25 + 5 * i, 2 * (i + 2), i % 2 == 0 ? 5 : 10};
    case 5: return {10 + 3 * i, 4 + 2 * i, 0};
    case 6: return {8 + i, 3 + i % 4, 5 + i};
    case 7: {
        static constexpr int64_t cuts[] = {10, 20, 25, 50, 30, 40, 15, 5};
        return {40 + 20 * i, cuts[i], 0};
    }
    }
    throw Error("unknown toy skill");
}

std::string fill(std::string_view tmpl, const Numbers& n) {
    std::string s(tmpl);
    s = replace_all(s, "{a}", std::to_string(n.a));
    s = replace_all(s, "{b}", std::to_string(n.b));
    return replace_all(s, "{c}", std::to_string(n.c));
}

std::string format_number(const grade::Number& n) {
    if (n.exact) return n.rational.str();
    return fmt::format("{}", n.real);
}

std::optional<grade::Number> solve(std::string_view question, size_t skill) {
    auto nums = numbers_in(question);
    auto expr = instantiate(skills()[skill].method, nums);
    if (!expr) return std::nullopt;
    return grade::evaluate_expression(*expr);
}

std::optional<std::string> method_line(std::string_view rationale) {
    std::optional<std::string> found;
    for (const auto& line : split_lines(rationale)) {
        std::string t = trim(line);
        if (t.starts_with("Method:")) found = trim(std::string_view(t).substr(7));
    }
    return found;
}

const ToyStudentModel::Entry* modal(const std::vector<ToyStudentModel::Entry>& entries) {
    const ToyStudentModel::Entry* best = nullptr;
    for (const auto& e : entries) {
        if (!best || e.weight > best->weight + 1e-12 ||
            (std::abs(e.weight - best->weight) <= 1e-12 && e.stamp > best->stamp))
            best = &e;
    }
    return best;
}

void reinforce(std::vector<ToyStudentModel::Entry>& bucket, const std::string& text, uint64_t stamp) {
    for (auto& e : bucket) {
        if (e.text == text) {
            e.weight += 1.0;
            e.stamp = stamp;
            return;
        }
    }
    bucket.push_back({text, 1.0, stamp});
}

json bucket_json(const std::map<std::string, std::vector<ToyStudentModel::Entry>>& buckets) {
    json out = json::object();
    for (const auto& [key, entries] : buckets) {
        json list = json::array();
        for (const auto& e : entries) list.push_back(json::array({e.text, e.weight, e.stamp}));
        out[key] = list;
    }
    return out;
}

std::map<std::string, std::vector<ToyStudentModel::Entry>> bucket_from_json(const json& j) {
    std::map<std::string, std::vector<ToyStudentModel::Entry>> out;
    for (const auto& [key, list] : j.items()) {
        auto& bucket = out[key];
        for (const auto& e : list) bucket.push_back({e.at(0).get<std::string>(), e.at(1).get<double>(), e.at(2).get<uint64_t>()});
    }
    return out;
}

} // namespace

const std::vector<Skill>& skills() {
    static const std::vector<Skill> list = {
        {"add", "Mia has {a} apples and buys {b} more. How many apples does she have now?", "{a}+{b}", false},
        {"sub", "A shelf holds {a} books and {b} of them are borrowed. How many books remain on the shelf?",
         "{a}-{b}", false},
        {"mul", "Each box holds {a} pencils. How many pencils are in {b} boxes?", "{a}*{b}", false},
        {"div", "{a} candies are shared equally among {b} children. How many candies does each child get?",
         "{a}/{b}", false},
        {"bags",
         "Jim finds {a} gold coins every hour for {b} hours and packs them into bags of {c} coins. How many bags "
         "does he fill?",
         "{a}*{b}/{c}", true},
        {"fence", "A garden is {a} meters long and {b} meters wide. How many meters of fence go around it?",
         "2*({a}+{b})", true},
        {"wages", "Sam earns {a} dollars an hour and works {b} hours a day for {c} days. How many dollars does Sam earn?",
         "{a}*{b}*{c}", true},
        {"sale", "A coat costs {a} dollars and the price is cut by {b} percent. What is the new price in dollars?",
         "{a}-{a}*{b}/100", true},
    };
    return list;
}

std::string signature(std::string_view question) {
    std::string s;
    for (char c : trim(question)) {
        if (!std::isdigit(static_cast<unsigned char>(c))) s += c;
        else if (s.empty() || s.back() != '#') s += '#';
    }
    return s;
}

std::vector<int64_t> numbers_in(std::string_view question) {
    std::vector<int64_t> out;
    for (size_t i = 0; i < question.size();) {
        if (!std::isdigit(static_cast<unsigned char>(question[i]))) {
            ++i;
            continue;
        }
        int64_t v = 0;
        size_t digits = 0;
        while (i < question.size() && std::isdigit(static_cast<unsigned char>(question[i]))) {
            if (digits < 18) v = v * 10 + (question[i] - '0');
            ++digits;
            ++i;
        }
        out.push_back(v);
    }
    return out;
}

std::optional<std::string> instantiate(std::string_view method, std::span<const int64_t> numbers) {
    std::string out;
    for (size_t i = 0; i < method.size(); ++i) {
        if (method[i] == '{' && i + 2 < method.size() && std::islower(static_cast<unsigned char>(method[i + 1])) &&
            method[i + 2] == '}') {
            size_t slot = static_cast<size_t>(method[i + 1] - 'a');
            if (slot >= numbers.size()) return std::nullopt;
            out += std::to_string(numbers[slot]);
            i += 2;
        } else {
            out += method[i];
        }
    }
    return out;
}

std::optional<size_t> classify(std::string_view question) {
    const std::string sig = signature(question);
    for (size_t s = 0; s < skills().size(); ++s) {
        if (signature(fill(skills()[s].question_template, {1, 1, 1})) == sig) return s;
    }
    return std::nullopt;
}

std::vector<corpus::Problem> make_corpus() {
    std::vector<corpus::Problem> out;
    for (size_t s = 0; s < skills().size(); ++s) {
        for (int64_t i = 0; i < 5; ++i) {
            corpus::Problem p;
            p.id = fmt::format("toy-{}-{}", skills()[s].name, i);
            p.question = fill(skills()[s].question_template, numbers_for(s, i));
            p.gold_answer = format_number(*solve(p.question, s));
            p.metadata["skill"] = skills()[s].name;
            p.metadata["question_type"] = "math-word-problem";
            out.push_back(std::move(p));
        }
    }
    return out;
}

corpus::TestSuite make_test_suite() {
    corpus::TestSuite suite;
    suite.name = "toy_arith";
    suite.answer_kind = corpus::AnswerKind::numeric;
    for (size_t s = 0; s < skills().size(); ++s) {
        for (int64_t i = 5; i < 8; ++i) {
            corpus::Problem p;
            p.id = fmt::format("toy-test-{}-{}", skills()[s].name, i - 5);
            p.question = fill(skills()[s].question_template, numbers_for(s, i));
            p.gold_answer = format_number(*solve(p.question, s));
            p.suite = suite.name;
            p.metadata["skill"] = skills()[s].name;
            suite.problems.push_back(std::move(p));
        }
    }
    suite.size = suite.problems.size();
    return suite;
}

std::string transferable_rationale(std::string_view question, size_t skill) {
    auto expr = *instantiate(skills()[skill].method, numbers_in(question));
    auto answer = format_number(*solve(question, skill));
    return fmt::format("We apply the method to the numbers in the question: {} = {}.\nMethod: {}\nFinal Answer: "
                       "\\boxed{{{}}}",
                       expr, answer, skills()[skill].method, answer);
}

std::string answer_only_rationale(std::string_view question, size_t skill) {
    auto answer = format_number(*solve(question, skill));
    return fmt::format("Reading the question carefully, the result is {}.\nMethod: {}\nFinal Answer: \\boxed{{{}}}",
                       answer, answer, answer);
}

std::string student_target_question(std::string_view prompt) {
    size_t pos = prompt.rfind("Question: ");
    if (pos == std::string_view::npos) return trim(prompt);
    pos += std::strlen("Question: ");
    size_t end = prompt.find("\nAnswer:", pos);
    return trim(prompt.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
}

std::string teacher_target_question(std::string_view prompt) {
    constexpr std::string_view marker = "### question:\n";
    size_t pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return student_target_question(prompt);
    pos += marker.size();
    size_t end = prompt.find("\n###", pos);
    return trim(prompt.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
}

std::vector<ScoredBlock> parse_scored_blocks(std::string_view prompt) {
    std::vector<ScoredBlock> blocks;
    auto lines = split_lines(prompt);
    std::string question;
    int iteration = 1;
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.starts_with("------------")) break;
        if (line == "### question:") {
            std::string body;
            while (i + 1 < lines.size() && !lines[i + 1].starts_with("###") && !lines[i + 1].starts_with("------------")) {
                body += lines[++i];
                body += '\n';
            }
            question = trim(body);
            iteration = 1;
        } else if (line.starts_with("### ITERATION ")) {
            iteration = std::atoi(line.c_str() + std::strlen("### ITERATION "));
        } else if (line == "### score:") {
            while (i + 1 < lines.size() && trim(lines[i + 1]).empty()) ++i;
            if (i + 1 < lines.size()) blocks.push_back({question, iteration, std::atoi(trim(lines[++i]).c_str())});
        }
    }
    return blocks;
}

ScriptedTeacher::ScriptedTeacher(ScriptedTeacherOptions options) : options_(std::move(options)) {}

std::set<size_t> ScriptedTeacher::repaired_skills(std::string_view prompt) const {
    std::set<size_t> repaired;
    if (!options_.gap_aware) return repaired;
    std::map<int, std::set<size_t>> failing;
    for (const auto& block : parse_scored_blocks(prompt)) {
        if (block.score != 0) continue;
        if (auto skill = classify(block.question); skill && skills()[*skill].hard) failing[block.iteration].insert(*skill);
    }
    for (const auto& [iteration, skill_set] : failing) {
        size_t fixed = 0;
        for (size_t skill : skill_set) {
            if (fixed >= options_.fixes_per_round) break;
            if (repaired.insert(skill).second) ++fixed;
        }
    }
    return repaired;
}

std::string ScriptedTeacher::generate(const std::string& prompt, const backends::GenerationParams&) {
    const std::string question = teacher_target_question(prompt);
    if (auto it = options_.table.find(question); it != options_.table.end()) return it->second;
    const std::string header = prompt.find("### new_answer") != std::string::npos ? "### new_answer\n" : "";
    auto skill = classify(question);
    if (!skill) return header + "I cannot work out this problem.";
    if (!skills()[*skill].hard || repaired_skills(prompt).contains(*skill))
        return header + transferable_rationale(question, *skill);
    return header + answer_only_rationale(question, *skill);
}

NoisyTeacher::NoisyTeacher(std::shared_ptr<backends::Generator> inner, double rate, uint64_t seed)
    : inner_(std::move(inner)), rate_(rate), seed_(seed) {
    if (rate < 0.0 || rate > 1.0) throw Error("noise rate must be in [0, 1]");
}

bool NoisyTeacher::corrupts(const std::string& prompt) const {
    std::string digest = sha256_hex(fmt::format("{}\n{}", seed_, prompt));
    uint64_t bits = std::stoull(digest.substr(0, 13), nullptr, 16); // 52 bits
    return static_cast<double>(bits) / static_cast<double>(1ULL << 52) < rate_;
}

std::string NoisyTeacher::generate(const std::string& prompt, const backends::GenerationParams& params) {
    std::string text = inner_->generate(prompt, params);
    if (!corrupts(prompt)) return text;
    auto extracted = grade::extract_final_answer(text);
    std::string wrong = "7";
    if (auto* r = std::get_if<grade::Rational>(&extracted.canonical)) {
        if (auto w = r->add(grade::Rational(7))) wrong = w->str();
    }
    return text + fmt::format("\nOn second thought the total is \\boxed{{{}}}.", wrong);
}

ToyStudentModel ToyStudentModel::trained(std::span<const backends::TrainingRecord> records, int epochs) const {
    if (epochs < 1) throw Error("epochs must be >= 1");
    ToyStudentModel next = *this;
    std::set<std::string> questions, signatures;
    for (const auto& r : records) {
        questions.insert(trim(r.question));
        if (method_line(r.rationale)) signatures.insert(signature(r.question));
    }
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const auto& q : questions)
            for (auto& e : next.exact_[q]) e.weight *= 0.5;
        for (const auto& s : signatures)
            for (auto& e : next.methods_[s]) e.weight *= 0.5;
        for (const auto& r : records) {
            ++next.clock_;
            reinforce(next.exact_[trim(r.question)], r.rationale, next.clock_);
            if (auto method = method_line(r.rationale)) reinforce(next.methods_[signature(r.question)], *method, next.clock_);
        }
    }
    return next;
}

std::string ToyStudentModel::answer(std::string_view question) const {
    const std::string q = trim(question);
    if (auto it = exact_.find(q); it != exact_.end()) {
        if (const auto* best = modal(it->second)) return best->text;
    }
    if (auto it = methods_.find(signature(q)); it != methods_.end()) {
        if (const auto* best = modal(it->second)) {
            auto expr = instantiate(best->text, numbers_in(q));
            std::optional<grade::Number> value;
            if (expr) value = grade::evaluate_expression(*expr);
            if (value) {
                auto v = format_number(*value);
                return fmt::format("Following the method I learned: {} = {}.\nMethod: {}\nFinal Answer: \\boxed{{{}}}",
                                   *expr, v, best->text, v);
            }
        }
    }
    return std::string(kFallback);
}

std::string ToyStudentModel::generate(std::string_view prompt) const { return answer(student_target_question(prompt)); }

json ToyStudentModel::to_json() const {
    return {{"clock", clock_}, {"exact", bucket_json(exact_)}, {"methods", bucket_json(methods_)}};
}

ToyStudentModel ToyStudentModel::from_json(const json& j) {
    ToyStudentModel m;
    m.clock_ = j.at("clock").get<uint64_t>();
    m.exact_ = bucket_from_json(j.at("exact"));
    m.methods_ = bucket_from_json(j.at("methods"));
    return m;
}

std::string ToyStudent::generate(const std::string& prompt, const backends::GenerationParams&) {
    return model_->generate(prompt);
}

ToyTrainer::ToyTrainer(std::filesystem::path checkpoint_dir) : dir_(std::move(checkpoint_dir)) {}

backends::CheckpointHandle ToyTrainer::fine_tune(const backends::FineTuneJob& job) {
    const std::string digest = backends::validate_job(job);
    ++jobs_;
    auto base = load(job.base);
    auto records = backends::load_training_data(job.dataset_path);
    auto model = base->trained(records, job.epochs);

    backends::CheckpointHandle handle;
    handle.id = "toy-" + sha256_hex(fmt::format("{}\n{}\n{}", job.base.id, digest, job.epochs)).substr(0, 16);
    handle.lineage = backends::extend_lineage(job.base, digest);
    // Logical clock: one second per fine-tune round since the epoch, so
    // toy runs stay reproducible.
    handle.created_at = fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(static_cast<std::time_t>(handle.lineage.size())));

    std::filesystem::create_directories(dir_);
    json record{{"checkpoint", backends::to_json(handle)}, {"model", model.to_json()}};
    write_file_atomic(dir_ / (handle.id + ".json"), record.dump() + "\n");
    return handle;
}

std::shared_ptr<const ToyStudentModel> ToyTrainer::load(const backends::CheckpointHandle& checkpoint) const {
    if (checkpoint.id == "base") return std::make_shared<const ToyStudentModel>();
    auto path = dir_ / (checkpoint.id + ".json");
    if (!std::filesystem::exists(path)) throw backends::TrainerError(fmt::format("unknown toy checkpoint '{}'", checkpoint.id));
    auto j = json::parse(read_file(path));
    return std::make_shared<const ToyStudentModel>(ToyStudentModel::from_json(j.at("model")));
}

} // namespace undo::toy
