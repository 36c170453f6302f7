#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include <robust_finetune/ensemble.hpp>

#include "support/oracles.hpp"

namespace rft {
namespace {

PredictionTable labels_only(std::vector<int> labels)
{
    PredictionTable t;
    for (std::size_t i = 0; i < labels.size(); ++i) t.rows.push_back({"r" + std::to_string(i), labels[i], {}});
    return t;
}

std::vector<double> random_simplex(Rng& rng, std::size_t c)
{
    std::vector<double> p(c);
    double s = 0.0;
    for (auto& v : p) s += (v = -std::log(1.0 - rng.uniform()));
    for (auto& v : p) v /= s;
    return p;
}

TEST(MajorityVote, PluralityWins)
{
    const std::vector<PredictionTable> t{labels_only({0}), labels_only({0}), labels_only({1})};
    EXPECT_EQ(majority_vote(t).rows[0].label, 0);
}

TEST(MajorityVote, SingleTableIsIdentity)
{
    const std::vector<PredictionTable> t{labels_only({3, 1, 4, 1, 5})};
    const auto out = majority_vote(t);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(out.rows[i].label, t[0].rows[i].label);
}

TEST(MajorityVote, ThreeWayTieWithoutProbabilitiesPicksLowestIndex)
{
    const std::vector<PredictionTable> t{labels_only({2}), labels_only({0}), labels_only({1})};
    EXPECT_EQ(majority_vote(t).rows[0].label, 0);
    EXPECT_EQ(majority_vote(t, TieRule::lowest_index).rows[0].label, 0);
}

TEST(MajorityVote, TieBrokenByMeanProbability)
{
    std::vector<PredictionTable> t(2);
    t[0].rows.push_back({"x", 0, {0.6, 0.4, 0.0}});
    t[1].rows.push_back({"x", 1, {0.1, 0.9, 0.0}});
    const auto out = majority_vote(t);
    EXPECT_EQ(out.rows[0].label, 1);
    EXPECT_NEAR(out.rows[0].probabilities[0], 0.35, 1e-15);
    EXPECT_EQ(majority_vote(t, TieRule::lowest_index).rows[0].label, 0);
}

TEST(MajorityVote, AlignsRowsById)
{
    PredictionTable a, b;
    a.rows = {{"p", 1, {}}, {"q", 2, {}}};
    b.rows = {{"q", 2, {}}, {"p", 1, {}}};
    const std::vector<PredictionTable> t{a, b, b};
    const auto out = majority_vote(t);
    EXPECT_EQ(out.rows[0].id, "p");
    EXPECT_EQ(out.rows[0].label, 1);
    EXPECT_EQ(out.rows[1].label, 2);
}

TEST(MajorityVote, MismatchedIdsNameTheId)
{
    PredictionTable a, b;
    a.rows = {{"p", 1, {}}, {"q", 2, {}}};
    b.rows = {{"p", 1, {}}, {"zz9", 2, {}}};
    const std::vector<PredictionTable> t{a, b};
    try {
        majority_vote(t);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("zz9"), std::string::npos) << e.what();
    }
    const std::vector<PredictionTable> shorter{a, labels_only({1})};
    EXPECT_THROW(majority_vote(shorter), Error);
    EXPECT_THROW(majority_vote(std::span<const PredictionTable>{}), Error);
}

TEST(MajorityVote, MatchesBruteForceTally)
{
    Rng rng(2024);
    const std::size_t classes = 14;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto k = 1 + rng.below(9);
        const auto rows = 1 + rng.below(5);
        const bool with_probs = rng.bernoulli(0.5);
        std::vector<PredictionTable> tables(k);
        for (auto& t : tables)
            for (std::size_t r = 0; r < rows; ++r) {
                // few distinct labels so ties are common
                const int label = static_cast<int>(rng.below(3));
                t.rows.push_back({"id" + std::to_string(r), label, with_probs ? random_simplex(rng, classes) : std::vector<double>{}});
            }
        const auto out = majority_vote(tables);
        for (std::size_t r = 0; r < rows; ++r)
            ASSERT_EQ(out.rows[r].label, test::brute_force_vote(tables, r, classes, with_probs)) << "trial " << trial;
    }
}

TEST(MajorityVote, InvariantToTableOrderAndUnanimous)
{
    Rng rng(5);
    std::vector<PredictionTable> tables(5);
    for (auto& t : tables)
        for (int r = 0; r < 50; ++r) t.rows.push_back({std::to_string(r), static_cast<int>(rng.below(4)), random_simplex(rng, 4)});
    const auto base = majority_vote(tables);
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    for (int shuffle = 0; shuffle < 10; ++shuffle) {
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(static_cast<std::uint64_t>(shuffle)));
        std::vector<PredictionTable> p;
        for (auto i : perm) p.push_back(tables[i]);
        EXPECT_EQ(majority_vote(p), base);
    }
    const std::vector<PredictionTable> same(4, tables[0]);
    const auto out = majority_vote(same);
    for (std::size_t r = 0; r < 50; ++r) EXPECT_EQ(out.rows[r].label, tables[0].rows[r].label);
}

TEST(Bootstrap, WithoutResamplingMembersEqualCorpus)
{
    const Corpus c{{"a", "x", 0}, {"b", "y", 1}};
    const auto parts = bootstrap_split(c, 1, 0, false);
    ASSERT_EQ(parts.size(), 1u);
    EXPECT_EQ(parts[0].size(), 2u);
    EXPECT_EQ(parts[0][1].id, "b");
}

TEST(Bootstrap, DistinctFractionNearOneMinusInverseE)
{
    const std::size_t n = 10'000;
    const auto idx = bootstrap_indices(n, 5, 77);
    for (const auto& sample : idx) {
        ASSERT_EQ(sample.size(), n);
        const std::set<std::size_t> distinct(sample.begin(), sample.end());
        const double frac = static_cast<double>(distinct.size()) / static_cast<double>(n);
        EXPECT_NEAR(frac, 1.0 - std::exp(-1.0), 0.02);
    }
    EXPECT_NE(idx[0], idx[1]);
}

TEST(Bootstrap, SeedDeterminesSamplesAndIdsStayUnique)
{
    Corpus c;
    for (int i = 0; i < 30; ++i) c.push_back({"e" + std::to_string(i), "t", i % 3});
    const auto a = bootstrap_split(c, 3, 9), b = bootstrap_split(c, 3, 9), d = bootstrap_split(c, 3, 10);
    for (std::size_t m = 0; m < 3; ++m) {
        std::set<std::string> ids;
        for (std::size_t i = 0; i < c.size(); ++i) {
            EXPECT_EQ(a[m][i].id, b[m][i].id);
            ids.insert(a[m][i].id);
        }
        EXPECT_EQ(ids.size(), c.size());
    }
    bool differs = false;
    for (std::size_t i = 0; i < c.size(); ++i) differs |= a[0][i].id != d[0][i].id;
    EXPECT_TRUE(differs);
    EXPECT_THROW(bootstrap_split(Corpus{}, 3, 0), Error);
    EXPECT_THROW(bootstrap_split(c, 0, 0), Error);
}

TEST(PredictionFile, RoundTripIsExact)
{
    Rng rng(1);
    PredictionTable t;
    for (int i = 0; i < 20; ++i) t.rows.push_back({"id, " + std::to_string(i), static_cast<int>(rng.below(14)), random_simplex(rng, 14)});
    std::stringstream s;
    write_predictions(s, t, true);
    EXPECT_EQ(read_predictions(s), t);

    std::stringstream bare;
    write_predictions(bare, t, false);
    const auto back = read_predictions(bare);
    EXPECT_FALSE(back.has_probabilities());
    EXPECT_EQ(back.rows[3].label, t.rows[3].label);
}

TEST(PredictionFile, RejectsMalformedInput)
{
    std::istringstream bad_header("ident,class\n");
    EXPECT_THROW(read_predictions(bad_header), Error);
    std::istringstream bad_label("id,class\nx,abc\n");
    EXPECT_THROW(read_predictions(bad_label), Error);
    std::istringstream dup("id,class\nx,1\nx,2\n");
    EXPECT_THROW(read_predictions(dup), Error);
    std::istringstream not_normalized("id,class,p0,p1\nx,0,0.9,0.3\n");
    EXPECT_THROW(read_predictions(not_normalized), Error);
}

} // namespace
} // namespace rft
