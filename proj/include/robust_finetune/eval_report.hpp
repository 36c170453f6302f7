#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"
#include "ensemble.hpp"
#include "tensor.hpp"

namespace rft {

struct EvalResult {
    double accuracy = 0.0;
    std::size_t right = 0;
    std::size_t all = 0;
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;

    [[nodiscard]] double error_rate() const { return 1.0 - accuracy; }
};

namespace detail {

/// Gold labels keyed by id, checking the id sets of predictions and gold agree.
inline std::map<std::string_view, int> gold_by_id(const PredictionTable& preds, std::span<const LabeledExample> gold)
{
    std::map<std::string_view, int> labels;
    for (const auto& ex : gold) {
        if (!ex.label) throw Error("gold example '" + ex.id + "' has no label");
        if (!labels.emplace(ex.id, *ex.label).second) throw Error("duplicate gold id '" + ex.id + "'");
    }
    if (labels.size() != preds.rows.size()) {
        std::map<std::string_view, int> seen;
        for (const auto& r : preds.rows)
            if (!labels.count(r.id)) throw Error("predicted id '" + r.id + "' has no gold label");
        for (const auto& r : preds.rows) seen.emplace(r.id, 0);
        for (const auto& ex : gold)
            if (!seen.count(ex.id)) throw Error("gold id '" + ex.id + "' has no prediction");
    }
    for (const auto& r : preds.rows)
        if (!labels.count(r.id)) throw Error("predicted id '" + r.id + "' has no gold label");
    return labels;
}

inline std::string format(const char* fmt, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline std::string pad_right(std::string s, std::size_t width)
{
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

inline std::string pad_left(std::string s, std::size_t width)
{
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

} // namespace detail

/// Acc = Right / All, plus the confusion matrix (rows: true class, columns: predicted).
inline EvalResult accuracy(const PredictionTable& preds, std::span<const LabeledExample> gold, std::size_t num_classes)
{
    const auto labels = detail::gold_by_id(preds, gold);
    EvalResult r;
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (const auto& row : preds.rows) {
        const int truth = labels.at(row.id);
        if (truth < 0 || static_cast<std::size_t>(truth) >= num_classes || row.label < 0 ||
            static_cast<std::size_t>(row.label) >= num_classes)
            throw Error("class index out of range for id '" + row.id + "'");
        ++r.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(row.label)];
        r.right += truth == row.label;
        ++r.all;
    }
    r.accuracy = r.all ? static_cast<double>(r.right) / static_cast<double>(r.all) : 0.0;
    return r;
}

struct CaseEntry {
    std::string id;
    int true_label = 0;
    int predicted = 0;
    double true_probability = 0.0;
};

struct ClassShare {
    int label = 0;
    std::size_t count = 0;
    double percent = 0.0;
};

/// The k mispredictions that put the least probability on the true class, and how their true classes split.
struct CaseStudy {
    std::size_t k = 100;
    std::vector<CaseEntry> entries;    ///< ascending true-class probability, then ascending id
    std::vector<ClassShare> shares;    ///< descending percent, then ascending class
};

inline CaseStudy case_study(const PredictionTable& preds, std::span<const LabeledExample> gold, std::size_t k = 100)
{
    if (!preds.rows.empty() && !preds.has_probabilities())
        throw Error("case study needs class probabilities; re-run predict with --probs");
    const auto labels = detail::gold_by_id(preds, gold);
    CaseStudy study;
    study.k = k;
    for (const auto& row : preds.rows) {
        const int truth = labels.at(row.id);
        if (truth == row.label) continue;
        if (static_cast<std::size_t>(truth) >= row.probabilities.size())
            throw Error("true class of '" + row.id + "' is outside its probability row");
        study.entries.push_back({row.id, truth, row.label, row.probabilities[static_cast<std::size_t>(truth)]});
    }
    std::sort(study.entries.begin(), study.entries.end(), [](const CaseEntry& a, const CaseEntry& b) {
        return a.true_probability != b.true_probability ? a.true_probability < b.true_probability : a.id < b.id;
    });
    if (study.entries.size() > k) study.entries.resize(k);

    std::map<int, std::size_t> counts;
    for (const auto& e : study.entries) ++counts[e.true_label];
    const auto n = static_cast<double>(study.entries.size());
    for (const auto& [label, count] : counts) study.shares.push_back({label, count, 100.0 * static_cast<double>(count) / n});
    std::stable_sort(study.shares.begin(), study.shares.end(),
                     [](const ClassShare& a, const ClassShare& b) { return a.count > b.count; });
    return study;
}

enum class ReportFormat { text, csv };

inline ReportFormat parse_report_format(std::string_view s)
{
    if (s == "text") return ReportFormat::text;
    if (s == "csv") return ReportFormat::csv;
    throw Error("unknown report format '" + std::string(s) + "' (supported: text, csv)");
}

/// Text: accuracy, confusion matrix and the case study table. CSV: `class,percent` plot data.
inline std::string render_report(const EvalResult& eval, const CaseStudy& study, const LabelSet& labels,
                                 ReportFormat format)
{
    auto name = [&](int label) {
        return static_cast<std::size_t>(label) < labels.size() ? labels.name(label) : std::to_string(label);
    };
    std::string out;
    if (format == ReportFormat::csv) {
        out = "class,percent\n";
        for (const auto& s : study.shares) out += csv::quote(name(s.label)) + "," + detail::format("%.1f", s.percent) + "\n";
        return out;
    }

    out += "Accuracy: " + detail::format("%.3f", eval.accuracy) + " (" + std::to_string(eval.right) + "/" +
           std::to_string(eval.all) + ")\n\n";
    out += "Confusion matrix (rows: true class, columns: predicted class index)\n";
    std::size_t name_w = 5;
    for (std::size_t c = 0; c < eval.confusion.size(); ++c) name_w = std::max(name_w, name(static_cast<int>(c)).size());
    std::size_t cell_w = 3;
    for (const auto& row : eval.confusion)
        for (auto v : row) cell_w = std::max(cell_w, std::to_string(v).size() + 1);
    out += detail::pad_right("", name_w);
    for (std::size_t c = 0; c < eval.confusion.size(); ++c) out += detail::pad_left(std::to_string(c), cell_w);
    out += "\n";
    for (std::size_t t = 0; t < eval.confusion.size(); ++t) {
        out += detail::pad_right(name(static_cast<int>(t)), name_w);
        for (auto v : eval.confusion[t]) out += detail::pad_left(std::to_string(v), cell_w);
        out += "\n";
    }
    out += "\n";

    if (study.entries.empty()) {
        out += "Case study: no mispredictions\n";
        return out;
    }
    out += "Case study: " + std::to_string(study.entries.size()) +
           " mispredictions with the lowest true-class probability\n";
    std::size_t class_w = 5;
    for (const auto& s : study.shares) class_w = std::max(class_w, name(s.label).size());
    out += detail::pad_right("class", class_w) + "  " + detail::pad_left("count", 5) + "  " +
           detail::pad_left("percent", 7) + "\n";
    for (const auto& s : study.shares)
        out += detail::pad_right(name(s.label), class_w) + "  " + detail::pad_left(std::to_string(s.count), 5) + "  " +
               detail::pad_left(detail::format("%.1f", s.percent), 7) + "\n";
    out += "\n";
    std::size_t id_w = 2;
    for (const auto& e : study.entries) id_w = std::max(id_w, e.id.size());
    std::size_t pred_w = 9;
    for (const auto& e : study.entries) {
        class_w = std::max(class_w, name(e.true_label).size());
        pred_w = std::max(pred_w, name(e.predicted).size());
    }
    out += detail::pad_right("id", id_w) + "  " + detail::pad_right("true", class_w) + "  " +
           detail::pad_right("predicted", pred_w) + "  p(true)\n";
    for (const auto& e : study.entries)
        out += detail::pad_right(e.id, id_w) + "  " + detail::pad_right(name(e.true_label), class_w) + "  " +
               detail::pad_right(name(e.predicted), pred_w) + "  " +
               detail::format("%.6f", e.true_probability) + "\n";
    return out;
}

struct ScoreRow {
    std::string method;
    double accuracy = 0.0;
};

/// Method / accuracy table, scores to three decimals, method column left-aligned.
inline std::string render_score_table(std::span<const ScoreRow> rows)
{
    std::size_t w = 7;
    for (const auto& r : rows) w = std::max(w, r.method.size());
    std::string out = detail::pad_right("Methods", w) + "  " + detail::pad_left("Accuracy", 8) + "\n";
    for (const auto& r : rows)
        out += detail::pad_right(r.method, w) + "  " + detail::pad_left(detail::format("%.3f", r.accuracy), 8) + "\n";
    return out;
}

} // namespace rft
