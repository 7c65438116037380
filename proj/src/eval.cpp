// Copyright (C) 2026 The undo-distill Authors
// SPDX-License-Identifier: Apache-2.0

#include "undo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace undo::eval {

using nlohmann::json;

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string signed_gain(double gain) {
    if (gain < 0) return fmt::format("↓{:.2f}", gain);
    return fmt::format("↑+{:.2f}", gain);
}

// Shortest of %.2f / %.3f that keeps the value, e.g. 7.5 -> 7.50, 8.125 -> 8.125.
std::string percent_text(double v) {
    std::string two = fmt::format("{:.2f}", v);
    if (std::abs(std::stod(two) - v) < 1e-9) return two;
    return fmt::format("{:.3f}", v);
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    return "\"" + replace_all(std::string(s), "\"", "\"\"") + "\"";
}

std::string render_grid(const std::vector<std::vector<std::string>>& rows, Format format) {
    std::string out;
    if (format == Format::csv) {
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(row[i]);
            out += '\n';
        }
        return out;
    }
    if (format == Format::markdown) {
        for (size_t r = 0; r < rows.size(); ++r) {
            out += "|";
            for (const auto& cell : rows[r]) out += " " + cell + " |";
            out += '\n';
            if (r == 0) {
                out += "|";
                for (size_t i = 0; i < rows[r].size(); ++i) out += i == 0 ? " --- |" : " ---: |";
                out += '\n';
            }
        }
        return out;
    }
    // Plain text: pad by code points so the arrows do not skew columns.
    auto width = [](const std::string& s) {
        size_t n = 0;
        for (unsigned char c : s) n += (c & 0xC0) != 0x80;
        return n;
    };
    std::vector<size_t> widths;
    for (const auto& row : rows) {
        widths.resize(std::max(widths.size(), row.size()), 0);
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
    }
    for (const auto& row : rows) {
        std::string line;
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) line += "  ";
            std::string pad(widths[i] - width(row[i]), ' ');
            line += i == 0 ? row[i] + pad : pad + row[i];
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + '\n';
    }
    return out;
}

} // namespace

SuiteEvaluation evaluate_suite(backends::Generator& student, const corpus::TestSuite& suite,
                               const prompts::TemplateSet& templates, std::string_view instruction,
                               const backends::GenerationParams& params, size_t parallelism) {
    if (suite.problems.empty()) throw Error(fmt::format("suite '{}' is empty", suite.name));
    if (suite.few_shot.size() < suite.few_shot_k)
        throw Error(fmt::format("suite '{}' needs {} few-shot exemplars, {} loaded", suite.name, suite.few_shot_k,
                                suite.few_shot.size()));
    std::span<const corpus::FewShotExample> shots(suite.few_shot.data(), suite.few_shot_k);
    std::vector<std::string> prompt_texts;
    prompt_texts.reserve(suite.problems.size());
    for (const auto& p : suite.problems)
        prompt_texts.push_back(prompts::build_student_prompt(templates, p.question, instruction, shots));
    auto results = backends::batch_generate(student, prompt_texts, params, parallelism);

    SuiteEvaluation out;
    for (size_t i = 0; i < results.size(); ++i) {
        if (!results[i].ok()) {
            ++out.failures;
            grade::GradedGeneration g;
            g.problem_id = suite.problems[i].id;
            g.score = 0;
            out.graded.push_back(std::move(g));
            continue;
        }
        out.graded.push_back(grade::grade_one(suite.problems[i], *results[i].text, suite.answer_kind));
    }
    out.metrics = grade::accuracy(out.graded, suite.name);
    return out;
}

double percent_cell(double accuracy) { return round2(accuracy * 100.0); }

IterationReport build_report(std::string model_label, std::vector<IterationMetrics> per_iteration,
                             const std::vector<IterationGradings>* gradings, size_t baseline_row,
                             std::vector<std::string> row_labels) {
    if (per_iteration.empty()) throw Error("report needs at least one iteration");
    if (baseline_row >= per_iteration.size()) throw Error("baseline row out of range");
    IterationReport r;
    r.model_label = std::move(model_label);
    for (const auto& [suite, m] : per_iteration.front()) r.suites.push_back(suite);
    for (size_t i = 0; i < per_iteration.size(); ++i) {
        std::vector<std::string> suites;
        for (const auto& [suite, m] : per_iteration[i]) suites.push_back(suite);
        if (suites != r.suites)
            throw Error(fmt::format("iteration {} covers suites [{}], iteration 1 covers [{}]", i + 1,
                                    fmt::join(suites, ", "), fmt::join(r.suites, ", ")));
    }
    // Conventional column order when the suites are the known ones.
    std::vector<std::string> order;
    for (const auto& info : corpus::suite_registry()) {
        if (std::find(r.suites.begin(), r.suites.end(), info.name) != r.suites.end()) order.push_back(info.name);
    }
    for (const auto& s : r.suites) {
        if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
    }
    r.suites = order;

    if (row_labels.empty()) {
        for (size_t i = 0; i < per_iteration.size(); ++i) row_labels.push_back(std::to_string(i + 1));
    }
    if (row_labels.size() != per_iteration.size()) throw Error("one row label per iteration is required");
    r.row_labels = std::move(row_labels);
    r.baseline_row = baseline_row;
    r.per_iteration = std::move(per_iteration);

    for (const auto& row : r.per_iteration) {
        std::vector<grade::SuiteMetrics> list;
        for (const auto& s : r.suites) list.push_back(row.at(s));
        r.averages.push_back(grade::weighted_average(list));
    }
    const auto& base = r.per_iteration[baseline_row];
    for (size_t i = 0; i < r.per_iteration.size(); ++i) {
        for (const auto& s : r.suites) {
            double gain = percent_cell(r.per_iteration[i].at(s).accuracy) - percent_cell(base.at(s).accuracy);
            r.gains_vs_baseline[{i, s}] = round2(gain);
        }
        r.average_gains.push_back(round2(percent_cell(r.averages[i]) - percent_cell(r.averages[baseline_row])));
    }

    if (gradings) {
        if (gradings->size() != r.per_iteration.size()) throw Error("one grading set per iteration is required");
        const auto& base_g = (*gradings)[baseline_row];
        for (size_t i = 0; i < gradings->size(); ++i) {
            for (const auto& s : r.suites) {
                auto b = base_g.find(s);
                auto c = (*gradings)[i].find(s);
                if (b == base_g.end() || c == (*gradings)[i].end()) continue;
                r.significance_marks[{i, s}] = grade::significance(b->second, c->second);
            }
        }
    }
    return r;
}

Format format_from_string(std::string_view s) {
    if (s == "text") return Format::text;
    if (s == "csv") return Format::csv;
    if (s == "markdown" || s == "md") return Format::markdown;
    throw Error(fmt::format("unknown format '{}' (expected text, csv or markdown)", s));
}

std::string suite_title(std::string_view suite) {
    static const std::map<std::string, std::string, std::less<>> titles = {
        {"gsm8k", "GSM8K"},     {"math500", "MATH"},         {"mmlu_pro", "MMLU PRO"},
        {"svamp", "SVAMP"},     {"strategyqa", "StrategyQA"}, {"theoremqa", "Theorem QA"},
    };
    auto it = titles.find(suite);
    return it == titles.end() ? std::string(suite) : it->second;
}

std::string render_table(const IterationReport& report, Format format) {
    std::vector<std::vector<std::string>> rows;
    const std::string row_header = report.row_labels.size() && report.row_labels[0] == "1" ? "Iter." : "Row";
    if (format == Format::csv) {
        std::vector<std::string> header{"model", "iteration"};
        for (const auto& s : report.suites) {
            header.push_back(s);
            header.push_back(s + "_gain");
            header.push_back(s + "_p");
        }
        header.push_back("average");
        header.push_back("average_gain");
        rows.push_back(header);
        for (size_t i = 0; i < report.per_iteration.size(); ++i) {
            std::vector<std::string> row{report.model_label, report.row_labels[i]};
            for (const auto& s : report.suites) {
                row.push_back(fmt::format("{:.2f}", percent_cell(report.per_iteration[i].at(s).accuracy)));
                row.push_back(fmt::format("{:.2f}", report.gains_vs_baseline.at({i, s})));
                auto p = report.significance_marks.find({i, s});
                row.push_back(p == report.significance_marks.end() ? "" : fmt::format("{:.6g}", p->second));
            }
            row.push_back(fmt::format("{:.2f}", percent_cell(report.averages[i])));
            row.push_back(fmt::format("{:.2f}", report.average_gains[i]));
            rows.push_back(row);
        }
        return render_grid(rows, format);
    }

    std::vector<std::string> header{"Model", row_header};
    for (const auto& s : report.suites) header.push_back(suite_title(s));
    header.push_back("Average");
    rows.push_back(header);
    for (size_t i = 0; i < report.per_iteration.size(); ++i) {
        std::vector<std::string> row{i == 0 ? report.model_label : "", report.row_labels[i]};
        auto cell = [&](double accuracy, double gain, std::optional<double> p) {
            std::string text = fmt::format("{:.2f}", percent_cell(accuracy));
            if (i != report.baseline_row) text += fmt::format(" ({})", signed_gain(gain));
            if (p && *p < 0.05) text += "*";
            return text;
        };
        for (const auto& s : report.suites) {
            auto p = report.significance_marks.find({i, s});
            row.push_back(cell(report.per_iteration[i].at(s).accuracy, report.gains_vs_baseline.at({i, s}),
                               p == report.significance_marks.end() ? std::nullopt : std::optional(p->second)));
        }
        row.push_back(cell(report.averages[i], report.average_gains[i], std::nullopt));
        rows.push_back(row);
    }
    return render_grid(rows, format);
}

std::string render_ood_table(std::span<const OodEntry> entries, Format format) {
    std::vector<std::string> suites, models;
    std::map<std::pair<std::string, std::string>, const OodEntry*> cells;
    for (const auto& e : entries) {
        if (std::find(suites.begin(), suites.end(), e.suite) == suites.end()) suites.push_back(e.suite);
        if (std::find(models.begin(), models.end(), e.model) == models.end()) models.push_back(e.model);
        cells[{e.model, e.suite}] = &e;
    }
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Model"};
    for (const auto& s : suites) {
        if (format == Format::csv) {
            header.push_back(s + "_standard");
            header.push_back(s + "_undo");
            header.push_back(s + "_gain");
        } else {
            header.push_back(suite_title(s) + " Standard Dist.");
            header.push_back(suite_title(s) + " UNDO");
        }
    }
    rows.push_back(header);
    for (const auto& m : models) {
        std::vector<std::string> row{m};
        for (const auto& s : suites) {
            auto it = cells.find({m, s});
            if (it == cells.end()) {
                row.insert(row.end(), format == Format::csv ? 3 : 2, "");
                continue;
            }
            const OodEntry& e = *it->second;
            double gain = std::round((e.undo - e.standard) * 1000.0) / 1000.0;
            if (format == Format::csv) {
                row.push_back(percent_text(e.standard));
                row.push_back(percent_text(e.undo));
                row.push_back(percent_text(gain));
            } else {
                row.push_back(percent_text(e.standard) + "%");
                row.push_back(fmt::format("{}% ({}{})", percent_text(e.undo), gain < 0 ? "↓" : "↑+",
                                          percent_text(gain)));
            }
        }
        rows.push_back(row);
    }
    return render_grid(rows, format);
}

std::string plot_series_csv(std::span<const IterationReport> reports) {
    std::string out = "model,suite,iteration,accuracy\n";
    for (const auto& r : reports) {
        for (size_t i = 0; i < r.per_iteration.size(); ++i) {
            for (const auto& s : r.suites) {
                out += fmt::format("{},{},{},{:.2f}\n", csv_field(r.model_label), csv_field(s), csv_field(r.row_labels[i]),
                                   percent_cell(r.per_iteration[i].at(s).accuracy));
            }
        }
    }
    return out;
}

std::filesystem::path emit_plot_series(std::span<const IterationReport> reports, const std::filesystem::path& out) {
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    write_file_atomic(out, plot_series_csv(reports));
    return out;
}

Fixture load_fixture(const json& j) {
    Fixture f;
    for (const auto& rep : j.value("reports", json::array())) {
        std::vector<IterationMetrics> rows;
        for (const auto& it : rep.at("iterations")) {
            IterationMetrics m;
            for (const auto& [suite, cell] : it.items()) {
                size_t n = cell.at("n").get<size_t>();
                if (cell.contains("correct")) m[suite] = grade::SuiteMetrics::from_counts(suite, n, cell.at("correct").get<size_t>());
                else m[suite] = grade::SuiteMetrics::from_reported(suite, n, cell.at("percent").get<double>() / 100.0);
            }
            rows.push_back(std::move(m));
        }
        std::vector<std::string> labels;
        if (rep.contains("rows")) labels = rep.at("rows").get<std::vector<std::string>>();
        f.reports.push_back(build_report(rep.at("model").get<std::string>(), std::move(rows), nullptr, 0, labels));
    }
    for (const auto& e : j.value("ood", json::array())) {
        f.ood.push_back({e.at("model").get<std::string>(), e.at("suite").get<std::string>(),
                         e.at("standard").get<double>(), e.at("undo").get<double>()});
    }
    return f;
}

Fixture load_fixture(const std::filesystem::path& path) { return load_fixture(json::parse(read_file(path))); }

json to_json(const IterationReport& report) {
    json rows = json::array();
    for (size_t i = 0; i < report.per_iteration.size(); ++i) {
        json suites = json::object();
        for (const auto& s : report.suites) {
            json cell = grade::to_json(report.per_iteration[i].at(s));
            cell["percent"] = percent_cell(report.per_iteration[i].at(s).accuracy);
            cell["gain"] = report.gains_vs_baseline.at({i, s});
            if (auto p = report.significance_marks.find({i, s}); p != report.significance_marks.end()) cell["p"] = p->second;
            suites[s] = cell;
        }
        rows.push_back({{"row", report.row_labels[i]},
                        {"suites", suites},
                        {"average", report.averages[i]},
                        {"average_percent", percent_cell(report.averages[i])},
                        {"average_gain", report.average_gains[i]}});
    }
    return {{"model", report.model_label}, {"rows", rows}};
}

} // namespace undo::eval
