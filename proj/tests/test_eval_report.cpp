#include <algorithm>
#include <fstream>
#include <regex>

#include <gtest/gtest.h>

#include <robust_finetune/eval_report.hpp>

#include "support/oracles.hpp"

namespace rft {
namespace {

Corpus gold_of(std::vector<int> labels)
{
    Corpus c;
    for (std::size_t i = 0; i < labels.size(); ++i) c.push_back({"g" + std::to_string(i), "", labels[i]});
    return c;
}

PredictionTable preds_of(std::vector<int> labels, std::vector<std::vector<double>> probs = {})
{
    PredictionTable t;
    for (std::size_t i = 0; i < labels.size(); ++i)
        t.rows.push_back({"g" + std::to_string(i), labels[i], probs.empty() ? std::vector<double>{} : probs[i]});
    return t;
}

std::vector<double> peaked(std::size_t c, std::size_t at, double mass)
{
    std::vector<double> p(c, (1.0 - mass) / static_cast<double>(c - 1));
    p[at] = mass;
    return p;
}

TEST(Accuracy, RightOverAll)
{
    const auto r = accuracy(preds_of({0, 1, 2, 0}), gold_of({0, 1, 2, 3}), 4);
    EXPECT_EQ(r.accuracy, 0.75);
    EXPECT_EQ(r.right, 3u);
    EXPECT_EQ(r.all, 4u);
    EXPECT_EQ(r.confusion[3][0], 1u);
    EXPECT_EQ(r.accuracy + r.error_rate(), 1.0);
}

TEST(Accuracy, PerfectPredictionsGiveDiagonalConfusion)
{
    const auto r = accuracy(preds_of({0, 1, 1, 2}), gold_of({0, 1, 1, 2}), 3);
    EXPECT_EQ(r.accuracy, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) EXPECT_EQ(r.confusion[i][j], 0u);
    EXPECT_EQ(r.confusion[1][1], 2u);
}

TEST(Accuracy, TraceEqualsRightOnRandomData)
{
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> p, g;
        for (int i = 0; i < 200; ++i) {
            p.push_back(static_cast<int>(rng.below(14)));
            g.push_back(static_cast<int>(rng.below(14)));
        }
        const auto r = accuracy(preds_of(p), gold_of(g), 14);
        std::size_t trace = 0, total = 0;
        for (std::size_t i = 0; i < 14; ++i) {
            trace += r.confusion[i][i];
            for (auto v : r.confusion[i]) total += v;
        }
        EXPECT_EQ(trace, r.right);
        EXPECT_EQ(total, 200u);
        EXPECT_EQ(r.accuracy + r.error_rate(), 1.0);
    }
}

TEST(Accuracy, Errors)
{
    Corpus unlabeled = gold_of({0});
    unlabeled[0].label.reset();
    EXPECT_THROW(accuracy(preds_of({0}), unlabeled, 2), Error);
    EXPECT_THROW(accuracy(preds_of({0, 1}), gold_of({0}), 2), Error);
    EXPECT_THROW(accuracy(preds_of({5}), gold_of({0}), 2), Error);
}

TEST(CaseStudy, EmptyWhenEverythingIsRight)
{
    const auto s = case_study(preds_of({0, 1}, {peaked(3, 0, 0.8), peaked(3, 1, 0.8)}), gold_of({0, 1}));
    EXPECT_TRUE(s.entries.empty());
    EXPECT_TRUE(s.shares.empty());
    const auto text = render_report(accuracy(preds_of({0, 1}), gold_of({0, 1}), 3), s, LabelSet::numbered(3), ReportFormat::text);
    EXPECT_NE(text.find("no mispredictions"), std::string::npos);
}

TEST(CaseStudy, SharesOfTrueClasses)
{
    // ten mispredictions: four with true class 0, three with 1, three with 2
    std::vector<int> gold{0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3};
    std::vector<int> pred{3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3};
    std::vector<std::vector<double>> probs;
    for (std::size_t i = 0; i < gold.size(); ++i) probs.push_back(peaked(4, 3, 0.7));
    const auto s = case_study(preds_of(pred, probs), gold_of(gold), 100);
    ASSERT_EQ(s.entries.size(), 10u);
    ASSERT_EQ(s.shares.size(), 3u);
    EXPECT_EQ(s.shares[0].label, 0);
    EXPECT_DOUBLE_EQ(s.shares[0].percent, 40.0);
    EXPECT_DOUBLE_EQ(s.shares[1].percent, 30.0);
    EXPECT_EQ(s.shares[1].label, 1);

    const auto labels = LabelSet::default_set();
    const auto csv = render_report({}, s, labels, ReportFormat::csv);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,percent");
    EXPECT_NE(csv.find("Human,40.0\n"), std::string::npos);
    const auto text = render_report(accuracy(preds_of(pred), gold_of(gold), 4), s, labels, ReportFormat::text);
    EXPECT_TRUE(std::regex_search(text, std::regex("Human +4 +40\\.0")));
}

TEST(CaseStudy, KeepsTheKLowestTrueClassProbabilities)
{
    Rng rng(31);
    const std::size_t n = 1000, c = 14;
    std::vector<int> gold, pred;
    std::vector<std::vector<double>> probs;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> p(c);
        double s = 0.0;
        for (auto& v : p) s += (v = rng.uniform(0.01, 1.0));
        for (auto& v : p) v /= s;
        gold.push_back(static_cast<int>(rng.below(c)));
        pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
        probs.push_back(p);
    }
    const auto table = preds_of(pred, probs);
    const auto s = case_study(table, gold_of(gold), 100);

    // oracle: every misprediction's true-class probability, fully sorted
    std::vector<std::pair<double, std::string>> wrong;
    for (std::size_t i = 0; i < n; ++i)
        if (gold[i] != pred[i]) wrong.emplace_back(probs[i][static_cast<std::size_t>(gold[i])], table.rows[i].id);
    std::sort(wrong.begin(), wrong.end());
    ASSERT_EQ(s.entries.size(), std::min<std::size_t>(100, wrong.size()));
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        EXPECT_EQ(s.entries[i].id, wrong[i].second);
        EXPECT_EQ(s.entries[i].true_probability, wrong[i].first);
    }
    double total = 0.0;
    for (const auto& sh : s.shares) total += sh.percent;
    EXPECT_NEAR(total, 100.0, 1e-9);

    // row order of the input does not matter
    auto shuffled = table;
    std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), std::mt19937_64(4));
    const auto again = case_study(shuffled, gold_of(gold), 100);
    ASSERT_EQ(again.entries.size(), s.entries.size());
    for (std::size_t i = 0; i < s.entries.size(); ++i) EXPECT_EQ(again.entries[i].id, s.entries[i].id);
}

TEST(CaseStudy, NeedsProbabilities)
{
    try {
        case_study(preds_of({1}), gold_of({0}));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("--probs"), std::string::npos);
    }
}

TEST(Report, FormatParsing)
{
    EXPECT_EQ(parse_report_format("csv"), ReportFormat::csv);
    try {
        parse_report_format("html");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("text, csv"), std::string::npos);
    }
}

TEST(Report, AccuracyPrintedToThreeDecimals)
{
    const auto text = render_report(accuracy(preds_of({0, 1, 2}), gold_of({0, 1, 1}), 3), {}, LabelSet::numbered(3),
                                    ReportFormat::text);
    EXPECT_NE(text.find("Accuracy: 0.667 (2/3)"), std::string::npos) << text;
}

std::string collapse_spaces(const std::string& s) { return std::regex_replace(s, std::regex(" +"), " "); }

TEST(ScoreTable, ReproducesPublishedRows)
{
    std::ifstream in(RFT_TEST_DATA_DIR "/method_scores.csv");
    ASSERT_TRUE(in) << "missing method_scores.csv";
    csv::Reader reader(in);
    reader.next();
    std::vector<ScoreRow> rows;
    while (auto rec = reader.next()) rows.push_back({rec->fields[0], std::stod(rec->fields[1])});
    const auto table = collapse_spaces(render_score_table(rows));
    for (const char* line : {"Methods Accuracy\n", "Random sample 19.927\n", "Tf-idf 44.280\n", "BERT fine-tuning 59.813\n",
                             "Ours 64.731\n"})
        EXPECT_NE(table.find(line), std::string::npos) << line << " not in\n" << table;
}

} // namespace
} // namespace rft
