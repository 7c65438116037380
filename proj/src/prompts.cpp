// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/prompts.hpp"

#include <cmath>

#include <fmt/format.h>

namespace undo::prompts {

namespace {

struct Node {
    enum class Kind { text, value, section, inverted } kind = Kind::text;
    std::string text; // literal text or tag name
    std::vector<Node> children;
};

bool is_blank(std::string_view s) {
    for (char c : s) {
        if (c != ' ' && c != '\t' && c != '\r') return false;
    }
    return true;
}

class TemplateParser {
public:
    explicit TemplateParser(std::string_view src) : src_(src) {}

    std::vector<Node> parse() {
        auto nodes = parse_until("");
        if (pos_ != src_.size()) throw Error("template: trailing content after closing tag");
        return nodes;
    }

private:
    std::string_view src_;
    size_t pos_ = 0;

    // If the tag spanning [open, close) is the only thing on its line, widens
    // the range to cover the whole line including its newline.
    std::pair<size_t, size_t> standalone_extent(size_t open, size_t close) const {
        size_t line_start = src_.rfind('\n', open == 0 ? 0 : open - 1);
        line_start = (line_start == std::string_view::npos || open == 0) ? 0 : line_start + 1;
        if (open > 0 && src_[open - 1] == '\n') line_start = open;
        size_t line_end = src_.find('\n', close);
        size_t after = line_end == std::string_view::npos ? src_.size() : line_end + 1;
        size_t content_end = line_end == std::string_view::npos ? src_.size() : line_end;
        if (is_blank(src_.substr(line_start, open - line_start)) && is_blank(src_.substr(close, content_end - close)))
            return {line_start, after};
        return {open, close};
    }

    std::vector<Node> parse_until(std::string_view closing) {
        std::vector<Node> nodes;
        for (;;) {
            size_t open = src_.find("{{", pos_);
            if (open == std::string_view::npos) {
                if (!closing.empty()) throw Error(fmt::format("template: section '{}' is not closed", closing));
                append_text(nodes, src_.substr(pos_));
                pos_ = src_.size();
                return nodes;
            }
            size_t close = src_.find("}}", open);
            if (close == std::string_view::npos) throw Error("template: unterminated tag");
            close += 2;
            std::string tag = trim(src_.substr(open + 2, close - open - 4));
            if (tag.empty()) throw Error("template: empty tag");
            char sigil = tag[0];
            if (sigil == '#' || sigil == '^' || sigil == '/') {
                auto [from, to] = standalone_extent(open, close);
                append_text(nodes, src_.substr(pos_, from - pos_));
                pos_ = to;
                std::string name = trim(tag.substr(1));
                if (sigil == '/') {
                    if (name != closing) throw Error(fmt::format("template: unexpected closing tag '{}'", name));
                    return nodes;
                }
                Node section;
                section.kind = sigil == '#' ? Node::Kind::section : Node::Kind::inverted;
                section.text = name;
                section.children = parse_until(name);
                nodes.push_back(std::move(section));
            } else {
                append_text(nodes, src_.substr(pos_, open - pos_));
                nodes.push_back(Node{Node::Kind::value, tag, {}});
                pos_ = close;
            }
        }
    }

    static void append_text(std::vector<Node>& nodes, std::string_view text) {
        if (!text.empty()) nodes.push_back(Node{Node::Kind::text, std::string(text), {}});
    }
};

void render_nodes(const std::vector<Node>& nodes, std::vector<const TemplateContext*>& stack, std::string& out) {
    for (const auto& node : nodes) {
        switch (node.kind) {
        case Node::Kind::text: out += node.text; break;
        case Node::Kind::value: {
            const std::string* found = nullptr;
            for (auto it = stack.rbegin(); it != stack.rend() && !found; ++it) {
                if (auto v = (*it)->values.find(node.text); v != (*it)->values.end()) found = &v->second;
            }
            if (!found) throw Error(fmt::format("template value '{}' is not bound", node.text));
            out += *found;
            break;
        }
        case Node::Kind::section:
        case Node::Kind::inverted: {
            const std::vector<TemplateContext>* list = nullptr;
            for (auto it = stack.rbegin(); it != stack.rend() && !list; ++it) {
                if (auto s = (*it)->sections.find(node.text); s != (*it)->sections.end()) list = &s->second;
            }
            const bool empty = !list || list->empty();
            if (node.kind == Node::Kind::inverted) {
                if (empty) render_nodes(node.children, stack, out);
                break;
            }
            if (empty) break;
            for (const auto& child : *list) {
                stack.push_back(&child);
                render_nodes(node.children, stack, out);
                stack.pop_back();
            }
            break;
        }
        }
    }
}

std::vector<TemplateContext> optional_block(const std::optional<std::string>& value, const char* key) {
    if (!value) return {};
    TemplateContext ctx;
    ctx.values[key] = *value;
    return {ctx};
}

void check_history(const ValidationExample& example) {
    if (example.history.empty())
        throw Error(fmt::format("validation problem '{}' has no history", example.problem.id));
    if (example.history.front().iteration < 1)
        throw Error(fmt::format("validation problem '{}': iterations start at {}", example.problem.id,
                                example.history.front().iteration));
    for (size_t i = 1; i < example.history.size(); ++i) {
        if (example.history[i].iteration != example.history[i - 1].iteration + 1)
            throw Error(fmt::format("validation problem '{}': history jumps from iteration {} to {}",
                                    example.problem.id, example.history[i - 1].iteration,
                                    example.history[i].iteration));
    }
}

} // namespace

std::string render(std::string_view tmpl, const TemplateContext& ctx) {
    auto nodes = TemplateParser(tmpl).parse();
    std::string out;
    std::vector<const TemplateContext*> stack{&ctx};
    render_nodes(nodes, stack, out);
    return out;
}

std::filesystem::path shipped_template_dir() { return UNDO_TEMPLATE_DIR; }

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
    TemplateSet t;
    t.teacher_iter1 = read_file(dir / "teacher_iter1.tmpl");
    t.teacher_iterk = read_file(dir / "teacher_iterk.tmpl");
    t.student_train = read_file(dir / "student_train.tmpl");
    t.student_eval = read_file(dir / "student_eval.tmpl");
    return t;
}

TemplateSet TemplateSet::shipped() { return load(shipped_template_dir()); }

std::map<std::string, std::string> TemplateSet::digests() const {
    return {{"teacher_iter1.tmpl", sha256_hex(teacher_iter1)},
            {"teacher_iterk.tmpl", sha256_hex(teacher_iterk)},
            {"student_train.tmpl", sha256_hex(student_train)},
            {"student_eval.tmpl", sha256_hex(student_eval)}};
}

std::string build_initial_teacher_prompt(const TemplateSet& templates, std::string_view question,
                                         std::string_view instruction, std::span<const InitialExemplar> exemplars) {
    TemplateContext ctx;
    ctx.values["question"] = std::string(question);
    ctx.values["instruction"] = std::string(instruction);
    auto& examples = ctx.sections["examples"];
    for (const auto& ex : exemplars) {
        TemplateContext e;
        e.values = {{"question", ex.problem.question},
                    {"teacher_answer", ex.teacher_answer},
                    {"student_answer", ex.student_answer},
                    {"score", std::to_string(ex.score)}};
        examples.push_back(std::move(e));
    }
    if (!examples.empty()) ctx.sections["has_examples"] = {TemplateContext{}};
    return render(templates.teacher_iter1, ctx);
}

std::string build_gap_prompt(const TemplateSet& templates, const GapContext& gap, std::string_view instruction) {
    TemplateContext ctx;
    ctx.values["question"] = gap.question;
    ctx.values["instruction"] = std::string(instruction);
    auto& examples = ctx.sections["examples"];
    for (const auto& ex : gap.validation_examples) {
        check_history(ex);
        TemplateContext e;
        e.values["question"] = ex.problem.question;
        auto& iterations = e.sections["iterations"];
        for (const auto& h : ex.history) {
            TemplateContext it;
            it.values = {{"iteration", std::to_string(h.iteration)},
                         {"teacher_answer", h.teacher_answer},
                         {"student_answer", h.student_answer},
                         {"score", std::to_string(h.score)}};
            iterations.push_back(std::move(it));
        }
        examples.push_back(std::move(e));
    }
    if (!examples.empty()) ctx.sections["has_examples"] = {TemplateContext{}};
    ctx.sections["prev_teacher"] = optional_block(gap.prev_teacher, "teacher_answer");
    ctx.sections["prev_student"] = optional_block(gap.prev_student, "student_answer");
    return render(templates.teacher_iterk, ctx);
}

std::string build_student_prompt(const TemplateSet& templates, std::string_view question,
                                 std::string_view instruction, std::span<const corpus::FewShotExample> few_shot) {
    TemplateContext ctx;
    ctx.values["question"] = std::string(question);
    ctx.values["instruction"] = std::string(instruction);
    auto& shots = ctx.sections["few_shot"];
    for (const auto& ex : few_shot) {
        TemplateContext s;
        s.values = {{"question", ex.question}, {"rationale", ex.rationale}};
        shots.push_back(std::move(s));
    }
    auto prompt = render(templates.student_eval, ctx);
    // Template files end in a newline; the model continues right after "Answer:".
    if (prompt.ends_with('\n')) prompt.pop_back();
    return prompt;
}

std::string build_training_text(const TemplateSet& templates, std::string_view question,
                                std::string_view instruction, std::string_view rationale) {
    TemplateContext ctx;
    ctx.values = {{"question", std::string(question)},
                  {"instruction", std::string(instruction)},
                  {"rationale", std::string(rationale)}};
    return render(templates.student_train, ctx);
}

size_t estimate_tokens(std::string_view text, double chars_per_token) {
    if (chars_per_token <= 0) throw Error("chars_per_token must be positive");
    size_t code_points = 0;
    for (unsigned char c : text) {
        if ((c & 0xC0) != 0x80) ++code_points;
    }
    return static_cast<size_t>(std::ceil(static_cast<double>(code_points) / chars_per_token));
}

BudgetCheck check_budget(std::string_view prompt, size_t budget, double chars_per_token) {
    if (budget == 0) throw Error("token budget must be positive");
    BudgetCheck check;
    check.estimate = estimate_tokens(prompt, chars_per_token);
    check.ok = check.estimate <= budget;
    check.exceeded_by = check.ok ? 0 : check.estimate - budget;
    return check;
}

BudgetExceeded::BudgetExceeded(size_t estimate, size_t budget)
    : Error(fmt::format("prompt needs ~{} tokens, budget is {} (exceeded by {})", estimate, budget,
                        estimate - budget)),
      estimate_(estimate),
      budget_(budget) {}

FittedPrompt fit_gap_prompt(const TemplateSet& templates, GapContext ctx, std::string_view instruction,
                            size_t budget, bool prune_oldest, double chars_per_token) {
    FittedPrompt fitted;
    for (;;) {
        fitted.prompt = build_gap_prompt(templates, ctx, instruction);
        auto check = check_budget(fitted.prompt, budget, chars_per_token);
        if (check.ok) return fitted;
        bool can_prune = prune_oldest;
        for (const auto& ex : ctx.validation_examples) can_prune = can_prune && ex.history.size() > 1;
        if (!can_prune || ctx.validation_examples.empty()) throw BudgetExceeded(check.estimate, budget);
        for (auto& ex : ctx.validation_examples) ex.history.erase(ex.history.begin());
        ++fitted.pruned_iterations;
    }
}

std::string strip_new_answer_header(std::string_view completion) {
    std::string text = trim(completion);
    constexpr std::string_view header = "### new_answer";
    if (text.starts_with(header)) text = trim(std::string_view(text).substr(header.size()));
    return text;
}

} // namespace undo::prompts
