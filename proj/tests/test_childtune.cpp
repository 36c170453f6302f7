#include <cmath>

#include <gtest/gtest.h>

#include <robust_finetune/childtune.hpp>
#include <robust_finetune/trainer.hpp>

#include "support/fixtures.hpp"

namespace rft {
namespace {

TEST(SampleMask, KeepProbabilityOneKeepsEverything)
{
    const auto mask = sample_mask({{"a", {3, 4}}, {"b", {7}}}, {1.0, 5}, 0);
    EXPECT_EQ(mask.at("a").ones(), 12u);
    EXPECT_EQ(mask.at("b").ones(), 7u);
}

TEST(SampleMask, OnesFractionWithinFourSigma)
{
    const std::size_t n = 1'000'000;
    for (double p : {0.1, 0.3, 0.5}) {
        const auto mask = sample_mask({{"w", {1000, 1000}}}, {p, 17}, 3);
        const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
        EXPECT_NEAR(static_cast<double>(mask.at("w").ones()) / static_cast<double>(n), p, 4 * sigma) << p;
    }
}

TEST(SampleMask, DeterministicPerStepAndFreshAcrossSteps)
{
    const MaskConfig cfg{0.3, 9};
    const std::map<std::string, Shape> shapes{{"w", {50, 20}}};
    EXPECT_EQ(sample_mask(shapes, cfg, 4), sample_mask(shapes, cfg, 4));
    const auto a = sample_mask(shapes, cfg, 4).at("w");
    const auto b = sample_mask(shapes, cfg, 5).at("w");
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) hamming += a.values[i] != b.values[i];
    EXPECT_GT(hamming, 0u);
}

TEST(SampleMask, TensorMaskIndependentOfOtherTensors)
{
    const MaskConfig cfg{0.4, 2};
    const auto alone = sample_mask({{"x", {30}}}, cfg, 1);
    const auto with_other = sample_mask({{"a", {10}}, {"x", {30}}}, cfg, 1);
    EXPECT_EQ(alone.at("x"), with_other.at("x"));
}

TEST(SampleMask, TargetSelectsTensors)
{
    const auto mask = sample_mask({{"layers.0.query.weight", {2}}, {"pooler.weight", {2}}}, {0.5, 1, "layers.*"}, 0);
    EXPECT_EQ(mask.size(), 1u);
    EXPECT_TRUE(mask.count("layers.0.query.weight"));
}

TEST(SampleMask, RejectsInvalidKeepProbability)
{
    for (double p : {0.0, -0.1, 1.5, std::nan("")}) EXPECT_THROW(sample_mask({{"w", {2}}}, {p, 0}, 0), Error) << p;
}

TEST(ApplyMask, OnesAndZeros)
{
    const Gradients g{{"w", Tensor{{3}, {1.5, -2.0, 3.0}}}};
    EXPECT_EQ(apply_mask(g, {{"w", {{3}, {1, 1, 1}}}}), g);
    EXPECT_EQ(apply_mask(g, {{"w", {{3}, {0, 0, 0}}}}).at("w").values, (Storage{0, 0, 0}));
    EXPECT_EQ(apply_mask(g, {{"w", {{3}, {1, 0, 1}}}}).at("w").values, (Storage{1.5, 0, 3.0}));
    EXPECT_THROW(apply_mask(g, {{"w", {{2}, {1, 1}}}}), Error);
}

TEST(ApplyMask, MaskedGradientIsUnbiasedEstimateOfScaledGradient)
{
    const Gradients g{{"w", Tensor{{4}, {1.0, -2.0, 0.5, 4.0}}}};
    const double p = 0.3;
    std::vector<double> sum(4, 0.0);
    const int draws = 10'000;
    for (int s = 0; s < draws; ++s) {
        const auto masked = apply_mask(g, sample_mask(shapes_of(g), {p, 21}, static_cast<std::uint64_t>(s)));
        for (std::size_t i = 0; i < 4; ++i) sum[i] += masked.at("w").values[i];
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const double expected = p * g.at("w").values[i];
        EXPECT_NEAR(sum[i] / draws, expected, 0.05 * std::abs(expected)) << i;
    }
}

TEST(ApplyMask, MaskedCoordinatesMoveOnlyByWeightDecay)
{
    Parameters params{{"w", Tensor{{4}, {1.0, 2.0, -1.0, 0.5}}}};
    const auto before = params.at("w").values;
    const Gradients g{{"w", Tensor{{4}, {0.3, -0.7, 0.2, 0.9}}}};
    const auto masked = apply_mask(g, {{"w", {{4}, {1, 0, 1, 0}}}});
    OptimizerState opt;
    opt.weight_decay = 0.01;
    const double lr = 0.1;
    adamw_step(params, masked, opt, lr);
    for (std::size_t i : {1u, 3u}) EXPECT_DOUBLE_EQ(params.at("w").values[i], before[i] * (1 - lr * 0.01));
    for (std::size_t i : {0u, 2u}) EXPECT_GT(std::abs(params.at("w").values[i] - before[i] * (1 - lr * 0.01)), 0.05);
}

TEST(ChildTuning, KeepProbabilityOneMatchesPlainTraining)
{
    const auto enc = test::tiny_encoder(0.1);
    const Classifier m(enc);
    TrainConfig plain;
    plain.batch_size = 2;
    plain.peak_lr = 1e-2;
    plain.seed = 4;
    TrainConfig masked = plain;
    masked.childtune_enabled = true;
    masked.childtune.p_f = 1.0;
    const ScheduleConfig sched{1e-2, 2, 10};
    Trainer a(m, m.init_params(), plain, sched), b(m, m.init_params(), masked, sched);
    const auto batch = test::batch_of({{2, 3, 4}, {5, 6, 7}}, {0, 3});
    for (int s = 0; s < 10; ++s) {
        a.step(batch);
        b.step(batch);
    }
    EXPECT_EQ(a.params(), b.params());
}

} // namespace
} // namespace rft
