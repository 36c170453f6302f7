#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "childtune.hpp"
#include "corpus.hpp"
#include "fgm.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace rft {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 3;
    std::size_t max_length = 280;
    bool shuffle = true;
    double clip_threshold = 1.0;
    std::uint64_t seed = 0;

    double peak_lr = 1e-5;
    /// Fraction of the total step count spent warming up.
    double warmup_ratio = 0.1;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.99;

    LossConfig loss{};
    bool fgm_enabled = false;
    FgmConfig fgm{};
    bool childtune_enabled = false;
    /// `seed` inside is ignored; masks are seeded from the run seed.
    MaskConfig childtune{};

    void validate() const
    {
        if (batch_size < 1) throw Error("train.batch_size must be >= 1");
        if (epochs < 1) throw Error("train.epochs must be >= 1");
        if (max_length < 1) throw Error("train.max_length must be >= 1");
        if (!(clip_threshold > 0.0)) throw Error("train.clip_threshold must be > 0");
        if (!(peak_lr > 0.0)) throw Error("schedule.peak_lr must be > 0");
        if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw Error("schedule.warmup_ratio must lie in [0, 1]");
        if (!(weight_decay >= 0.0)) throw Error("train.weight_decay must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error("adam betas must lie in [0, 1)");
        if (loss.kind == LossKind::in_trust) loss.in_trust.validate();
        if (fgm_enabled) fgm.validate();
        if (childtune_enabled) childtune.validate();
    }

    [[nodiscard]] ScheduleConfig schedule(std::size_t total_steps) const
    {
        const auto warmup = static_cast<std::size_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
        return {peak_lr, std::min(warmup, total_steps), total_steps};
    }
};

/// Raised when a step produces a non-finite loss.
class TrainingAborted : public Error {
public:
    TrainingAborted(std::uint64_t step, const std::string& what)
        : Error("training aborted at step " + std::to_string(step) + ": " + what), step_(step)
    {
    }
    [[nodiscard]] std::uint64_t step() const noexcept { return step_; }

private:
    std::uint64_t step_;
};

struct StepStats {
    double loss = 0.0;           ///< clean-pass batch loss
    double perturbed_loss = 0.0; ///< adversarial-pass loss (FGM only)
    double grad_norm = 0.0;      ///< global norm before clipping
    double lr = 0.0;
};

/// One optimizer update per call: gradients (clean or FGM-accumulated), child-tuning mask, global-norm
/// clipping, AdamW at the scheduled learning rate.
class Trainer {
public:
    Trainer(Classifier model, Parameters params, TrainConfig config, ScheduleConfig schedule)
        : model_(std::move(model)), params_(std::move(params)), config_(std::move(config)), schedule_(schedule)
    {
        config_.validate();
        schedule_.validate();
        model_.check_parameters(params_);
        optimizer_.beta1 = config_.beta1;
        optimizer_.beta2 = config_.beta2;
        optimizer_.eps = config_.adam_eps;
        optimizer_.weight_decay = config_.weight_decay;
    }

    StepStats step(const TokenizedBatch& batch)
    {
        const auto dropout_seed = derive_seed(config_.seed, {streams::dropout, step_});
        StepStats stats;
        Gradients grads;
        if (config_.fgm_enabled) {
            auto adv = adversarial_step(model_, params_, batch, config_.loss, config_.fgm, true, dropout_seed);
            stats.loss = adv.clean_loss;
            stats.perturbed_loss = adv.perturbed_loss;
            grads = std::move(adv.gradients);
            if (!std::isfinite(adv.perturbed_loss)) throw TrainingAborted(step_, "non-finite adversarial loss");
        } else {
            auto res = model_.backward(params_, batch, config_.loss, true, dropout_seed);
            stats.loss = res.loss;
            grads = std::move(res.gradients);
        }
        if (!std::isfinite(stats.loss)) throw TrainingAborted(step_, "non-finite loss");
        if (config_.childtune_enabled) {
            MaskConfig mc = config_.childtune;
            mc.seed = derive_seed(config_.seed, {streams::mask});
            grads = apply_mask(std::move(grads), sample_mask(shapes_of(grads), mc, step_));
        }
        stats.grad_norm = global_norm(grads);
        if (!std::isfinite(stats.grad_norm)) throw TrainingAborted(step_, "non-finite gradient");
        grads = clip_gradients(std::move(grads), config_.clip_threshold);
        stats.lr = lr_at(step_, schedule_);
        adamw_step(params_, grads, optimizer_, stats.lr);
        ++step_;
        return stats;
    }

    [[nodiscard]] const Parameters& params() const noexcept { return params_; }
    [[nodiscard]] const Classifier& model() const noexcept { return model_; }
    [[nodiscard]] std::uint64_t steps_taken() const noexcept { return step_; }
    [[nodiscard]] const OptimizerState& optimizer() const noexcept { return optimizer_; }

private:
    Classifier model_;
    Parameters params_;
    TrainConfig config_;
    ScheduleConfig schedule_;
    OptimizerState optimizer_;
    std::uint64_t step_ = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0; ///< 1-based
    double train_loss = 0.0;
    double valid_acc = 0.0;

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct Checkpoint {
    EncoderConfig model;
    TrainConfig train;
    std::vector<std::string> label_names;
    Parameters params;
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
    std::uint64_t best_step = 0;
};

/// Eval-mode predictions for a whole corpus, in corpus order.
inline std::vector<ClassPrediction> predict_corpus(const Classifier& model, const Parameters& params,
                                                   const TokenizedCorpus& corpus, std::size_t batch_size = 32)
{
    std::vector<ClassPrediction> out;
    out.reserve(corpus.size());
    BatchStream stream(corpus, batch_size, false, 0);
    while (auto batch = stream.next()) {
        auto preds = model.predict(params, *batch);
        for (auto& p : preds) out.push_back(std::move(p));
    }
    return out;
}

inline double corpus_accuracy(const Classifier& model, const Parameters& params, const TokenizedCorpus& corpus,
                              std::size_t batch_size = 32)
{
    const auto preds = predict_corpus(model, params, corpus, batch_size);
    std::size_t right = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) right += corpus.labels[i] && *corpus.labels[i] == preds[i].label;
    return preds.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(preds.size());
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full loop: per-epoch shuffled batches through Trainer::step, validation accuracy after each epoch, and the
/// best-validation parameters (earliest epoch on ties, rounded to checkpoint precision) kept in the result.
inline Checkpoint train(const EncoderConfig& model_config, const TokenizedCorpus& train_split,
                        const TokenizedCorpus& valid_split, const TrainConfig& config,
                        const EpochCallback& on_epoch = {})
{
    config.validate();
    if (train_split.size() == 0) throw Error("training split is empty");
    if (valid_split.size() == 0) throw Error("validation split is empty");
    for (const auto* split : {&train_split, &valid_split})
        for (const auto& l : split->labels)
            if (!l) throw Error("training and validation splits must be fully labeled");

    Classifier model(model_config);
    const std::size_t steps_per_epoch = (train_split.size() + config.batch_size - 1) / config.batch_size;
    Trainer trainer(model, model.init_params(), config, config.schedule(steps_per_epoch * config.epochs));

    Checkpoint ckpt;
    ckpt.model = model_config;
    ckpt.train = config;
    double best_acc = -1.0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        BatchStream stream(train_split, config.batch_size, config.shuffle,
                           derive_seed(config.seed, {streams::shuffle, epoch}));
        double loss_sum = 0.0;
        while (auto batch = stream.next()) {
            const auto stats = trainer.step(*batch);
            loss_sum += stats.loss * static_cast<double>(batch->batch_size);
        }
        EpochMetrics m{epoch, loss_sum / static_cast<double>(train_split.size()),
                       corpus_accuracy(model, trainer.params(), valid_split, config.batch_size)};
        ckpt.history.push_back(m);
        if (m.valid_acc > best_acc) {
            best_acc = m.valid_acc;
            ckpt.params = trainer.params();
            round_to_float(ckpt.params);
            ckpt.best_epoch = epoch;
            ckpt.best_step = trainer.steps_taken();
        }
        if (on_epoch) on_epoch(m);
    }
    return ckpt;
}

/// Overload on raw corpora: checks the splits are disjoint by id, then tokenizes both with `vocab`.
inline Checkpoint train(EncoderConfig model_config, std::span<const LabeledExample> train_split,
                        std::span<const LabeledExample> valid_split, const Vocabulary& vocab,
                        const TrainConfig& config, const EpochCallback& on_epoch = {})
{
    std::set<std::string> train_ids;
    for (const auto& ex : train_split) train_ids.insert(ex.id);
    for (const auto& ex : valid_split)
        if (train_ids.count(ex.id)) throw Error("id '" + ex.id + "' appears in both training and validation splits");
    model_config.vocab_size = vocab.size();
    return train(model_config, tokenize_corpus(train_split, vocab, config.max_length),
                 tokenize_corpus(valid_split, vocab, config.max_length), config, on_epoch);
}

/// `epoch,train_loss,valid_acc` rows.
inline void write_metrics(std::ostream& out, std::span<const EpochMetrics> history, char delimiter = ',')
{
    out << "epoch" << delimiter << "train_loss" << delimiter << "valid_acc\n";
    char buf[96];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof buf, "%zu%c%.6f%c%.6f\n", m.epoch, delimiter, m.train_loss, delimiter, m.valid_acc);
        out << buf;
    }
}

} // namespace rft
