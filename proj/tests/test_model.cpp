#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include <robust_finetune/model.hpp>

#include "support/oracles.hpp"

namespace rft {
namespace {

EncoderConfig toy_config(double dropout = 0.0)
{
    EncoderConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.hidden_dim = 8;
    c.ff_dim = 12;
    c.vocab_size = 20;
    c.max_positions = 10;
    c.num_classes = 5;
    c.dropout_rate = dropout;
    c.seed = 3;
    return c;
}

TokenizedBatch make(const std::vector<std::vector<int>>& seqs, std::vector<int> labels = {})
{
    TokenizedCorpus tc;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        tc.sequences.push_back(seqs[i]);
        tc.labels.push_back(labels.empty() ? std::nullopt : std::optional<int>(labels[i]));
    }
    std::vector<std::size_t> idx(seqs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return make_batch(tc, idx);
}

TEST(InitParams, DeterministicAndShaped)
{
    EncoderConfig c = toy_config();
    c.num_classes = 14;
    const Classifier m(c);
    const auto a = m.init_params();
    EXPECT_EQ(a, m.init_params());
    EXPECT_EQ(a.at("classifier.weight").shape, (Shape{8, 14}));
    EXPECT_EQ(a.at("classifier.bias").shape, (Shape{14}));
    for (const auto& [name, t] : a) EXPECT_TRUE(all_finite(t)) << name;
    c.seed = 4;
    EXPECT_NE(a.at("embeddings.token"), Classifier(c).init_params().at("embeddings.token"));
}

TEST(InitParams, RejectsInvalidConfig)
{
    EncoderConfig c = toy_config();
    c.hidden_dim = 6;
    c.num_heads = 4;
    EXPECT_THROW(Classifier{c}, Error);
    c = toy_config();
    c.num_classes = 1;
    EXPECT_THROW(Classifier{c}, Error);
    c = toy_config();
    c.dropout_rate = 1.0;
    EXPECT_THROW(init_params(c), Error);
}

TEST(Forward, ShapeAndNormalization)
{
    EncoderConfig c = toy_config();
    c.num_classes = 14;
    const Classifier m(c);
    const auto p = m.init_params();
    const auto r = m.forward(p, make({{2, 3, 4}, {5, 6}}), false);
    EXPECT_EQ(r.logits.size(), 2u * 14u);
    for (std::size_t b = 0; b < 2; ++b) {
        const auto row = r.probabilities_row(b);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
    }
}

TEST(Forward, EvalModeIsDeterministic)
{
    const Classifier m(toy_config(0.3));
    const auto p = m.init_params();
    const auto batch = make({{2, 3, 4, 5}, {6, 7}});
    EXPECT_EQ(m.forward(p, batch, false, 1).logits, m.forward(p, batch, false, 2).logits);
}

TEST(Forward, TrainModeDeterminedBySeed)
{
    const Classifier m(toy_config(0.3));
    const auto p = m.init_params();
    const auto batch = make({{2, 3, 4, 5}, {6, 7}});
    EXPECT_EQ(m.forward(p, batch, true, 9).logits, m.forward(p, batch, true, 9).logits);
    EXPECT_NE(m.forward(p, batch, true, 9).logits, m.forward(p, batch, true, 10).logits);
}

TEST(Forward, PermutationEquivariantInEvalMode)
{
    const Classifier m(toy_config());
    const auto p = m.init_params();
    const std::vector<std::vector<int>> seqs{{2, 3, 4}, {5, 6, 7, 8, 9}, {10}};
    const auto a = m.forward(p, make(seqs), false);
    const auto b = m.forward(p, make({seqs[2], seqs[0], seqs[1]}), false);
    const std::size_t perm[] = {2, 0, 1};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(b.logits_row(r)[k], a.logits_row(perm[r])[k], 1e-12);
}

TEST(Forward, PaddingDoesNotChangeOutputs)
{
    const Classifier m(toy_config());
    const auto p = m.init_params();
    const auto alone = m.forward(p, make({{2, 3}}), false);
    const auto padded = m.forward(p, make({{2, 3}, {4, 5, 6, 7, 8}}), false);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(alone.logits_row(0)[k], padded.logits_row(0)[k], 1e-12);
}

TEST(Forward, Errors)
{
    const Classifier m(toy_config());
    const auto p = m.init_params();
    EXPECT_THROW(m.forward(p, make({{2, 25}}), false), Error);
    EXPECT_THROW(m.forward(p, make({std::vector<int>(11, 3)}), false), Error);
    EXPECT_THROW(m.backward(p, make({{2, 3}}), {}), Error);
    EXPECT_NO_THROW(m.forward(p, make({{}}), false));
}

/// Gradient check: analytic vs central differences (step 1e-4) on >= 10 coordinates of every tensor.
void check_gradients(const EncoderConfig& cfg, const LossConfig& loss, bool train_mode)
{
    const Classifier m(cfg);
    auto params = m.init_params();
    // move biases and gains off their initial values so every path is exercised
    Rng rng(5);
    for (auto& [name, t] : params)
        if (!name.starts_with("embeddings.") && !name.ends_with(".weight"))
            for (double& v : t.values) v += rng.uniform(-0.2, 0.2);
    const auto batch = make({{2, 3, 4, 5, 6}, {7, 8, 9}, {10, 2, 11, 12}}, {1, 4, 0});
    const std::uint64_t seed = 77;
    const auto analytic = m.backward(params, batch, loss, train_mode, seed);

    auto loss_at = [&](const Parameters& ps) {
        const auto fwd = m.forward(ps, batch, train_mode, seed);
        double total = 0.0;
        for (std::size_t b = 0; b < batch.batch_size; ++b) {
            const auto pr = fwd.probabilities_row(b);
            const std::vector<double> p(pr.begin(), pr.end());
            const auto q = one_hot((*batch.labels)[b], cfg.num_classes);
            total += loss.kind == LossKind::cross_entropy ? cross_entropy(p, q) : in_trust(p, q, loss.in_trust);
        }
        return total / static_cast<double>(batch.batch_size);
    };
    EXPECT_NEAR(analytic.loss, loss_at(params), 1e-12);

    const double step = 1e-4;
    for (const auto& [name, t] : params) {
        std::vector<std::size_t> coords;
        if (name == Classifier::token_embedding) coords = {2 * 8 + 1, 7 * 8 + 3, 10 * 8, 12 * 8 + 7};
        if (name == Classifier::position_embedding) coords = {1, 8 + 2, 4 * 8 + 5};
        while (coords.size() < std::min<std::size_t>(12, t.size())) coords.push_back(rng.below(t.size()));
        for (auto i : coords) {
            Parameters plus = params, minus = params;
            plus.at(name).values[i] += step;
            minus.at(name).values[i] -= step;
            const double numeric = (loss_at(plus) - loss_at(minus)) / (2 * step);
            const double a = analytic.gradients.at(name).values[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
            EXPECT_LT(std::abs(a - numeric) / denom, 1e-4)
                << name << "[" << i << "] analytic " << a << " numeric " << numeric;
        }
    }
}

TEST(Backward, FiniteDifferenceCrossEntropyEval) { check_gradients(toy_config(), {}, false); }

TEST(Backward, FiniteDifferenceInTrustWithDropout)
{
    check_gradients(toy_config(0.2), {LossKind::in_trust, {1.0, 0.7, 0.4}}, true);
}

TEST(Backward, EmbeddingGradientMatchesParameterGradients)
{
    const Classifier m(toy_config(0.1));
    const auto p = m.init_params();
    const auto batch = make({{2, 3, 2}, {3, 4}}, {0, 1});
    const auto r = m.backward(p, batch, {}, true, 4);
    const auto& tok = r.gradients.at(Classifier::token_embedding);
    const auto& pos = r.gradients.at(Classifier::position_embedding);
    const auto h = 8u;
    std::vector<double> tok_sum(tok.size(), 0.0), pos_sum(pos.size(), 0.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < batch.length; ++t) {
            if (!batch.active(b, t)) {
                for (std::size_t k = 0; k < h; ++k) EXPECT_EQ(r.embedding_gradient.values[(b * batch.length + t) * h + k], 0.0);
                continue;
            }
            for (std::size_t k = 0; k < h; ++k) {
                const double g = r.embedding_gradient.values[(b * batch.length + t) * h + k];
                tok_sum[static_cast<std::size_t>(batch.token(b, t)) * h + k] += g;
                pos_sum[t * h + k] += g;
            }
        }
    for (std::size_t i = 0; i < tok.size(); ++i) EXPECT_NEAR(tok.values[i], tok_sum[i], 1e-14);
    for (std::size_t i = 0; i < pos.size(); ++i) EXPECT_NEAR(pos.values[i], pos_sum[i], 1e-14);
}

TEST(Backward, DuplicatedExampleContributesIdentically)
{
    const Classifier m(toy_config());
    const auto p = m.init_params();
    const auto single = m.backward(p, make({{2, 3, 4}}, {2}), {});
    const auto doubled = m.backward(p, make({{2, 3, 4}, {2, 3, 4}}, {2, 2}), {});
    EXPECT_EQ(doubled.example_losses[0], doubled.example_losses[1]);
    for (const auto& [name, g] : single.gradients)
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(doubled.gradients.at(name).values[i], g.values[i], 1e-14);
}

TEST(Backward, HeadBiasGradientVanishesAtMinimum)
{
    const Classifier m(toy_config());
    auto p = m.init_params();
    std::fill(p.at("classifier.weight").values.begin(), p.at("classifier.weight").values.end(), 0.0);
    p.at("classifier.bias").values = {0, 0, 0, 60, 0};
    const auto r = m.backward(p, make({{2, 3}, {4}}, {3, 3}), {});
    for (double g : r.gradients.at("classifier.bias").values) EXPECT_NEAR(g, 0.0, 1e-20);
    EXPECT_NEAR(r.loss, 0.0, 1e-20);
}

TEST(Predict, ArgmaxWithLowestIndexTieBreak)
{
    EXPECT_EQ(argmax(Storage{0.1, 0.7, 0.2}), 1);
    EXPECT_EQ(argmax(Storage{0.1, 0.1, 0.3, 0.1, 0.1, 0.3}), 2);
}

TEST(Predict, InvariantToConstantLogitShift)
{
    const Classifier m(toy_config());
    auto p = m.init_params();
    const auto batch = make({{2, 3, 4}, {5, 6}, {7}});
    const auto before = m.predict(p, batch);
    for (double& b : p.at("classifier.bias").values) b += 3.25;
    const auto after = m.predict(p, batch);
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(before[i].label, after[i].label);
        for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(before[i].probabilities[k], after[i].probabilities[k], 1e-12);
    }
}

TEST(CheckParameters, DetectsWrongShapeAndNonFinite)
{
    const Classifier m(toy_config());
    auto p = m.init_params();
    EXPECT_NO_THROW(m.check_parameters(p));
    p.at("pooler.bias").values[0] = std::nan("");
    EXPECT_THROW(m.check_parameters(p), Error);
    p = m.init_params();
    p.at("pooler.bias") = Tensor::zeros({3});
    EXPECT_THROW(m.check_parameters(p), Error);
}

} // namespace
} // namespace rft
