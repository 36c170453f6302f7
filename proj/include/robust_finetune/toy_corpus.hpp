#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "rng.hpp"

namespace rft {

/// Synthetic multi-class corpus with class-conditional token distributions: every class owns a small set of
/// signature words (partly shared with the next class) mixed into Zipf-distributed background words.
struct ToyCorpusOptions {
    std::size_t num_classes = 14;
    std::size_t background_words = 500;
    std::size_t signature_words = 10;
    /// Signature words also emitted by the previous class.
    std::size_t shared_signature_words = 3;
    double signature_rate = 0.25;
    std::size_t min_length = 16;
    std::size_t max_length = 40;
    /// Fraction of texts made deliberately longer than the truncation limit.
    double long_text_rate = 0.005;
    std::size_t long_text_length = 300;
};

inline Corpus make_toy_corpus(std::size_t n, const ToyCorpusOptions& opt, std::uint64_t seed,
                              const std::string& id_prefix = "")
{
    Rng rng(seed);
    // Zipf(1) background via inverse CDF
    std::vector<double> cdf(opt.background_words);
    double z = 0.0;
    for (std::size_t i = 0; i < cdf.size(); ++i) cdf[i] = (z += 1.0 / static_cast<double>(i + 1));
    for (double& c : cdf) c /= z;
    auto background = [&] {
        const double u = rng.uniform();
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        return "w" + std::to_string(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1));
    };
    auto signature = [&](std::size_t cls) {
        const auto own = opt.signature_words;
        const auto shared = std::min(opt.shared_signature_words, own);
        const auto k = rng.below(own + shared);
        if (k < own) return "c" + std::to_string(cls) + "s" + std::to_string(k);
        const auto prev = (cls + opt.num_classes - 1) % opt.num_classes;
        return "c" + std::to_string(prev) + "s" + std::to_string(k - own);
    };

    Corpus corpus;
    corpus.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto cls = rng.below(opt.num_classes);
        std::size_t len = opt.min_length + rng.below(opt.max_length - opt.min_length + 1);
        if (rng.bernoulli(opt.long_text_rate)) len = opt.long_text_length;
        std::string text;
        for (std::size_t t = 0; t < len; ++t) {
            if (t) text += ' ';
            text += rng.bernoulli(opt.signature_rate) ? signature(cls) : background();
        }
        corpus.push_back({id_prefix + std::to_string(i), std::move(text), static_cast<int>(cls)});
    }
    return corpus;
}

/// Replaces each label, with probability `rate`, by a uniformly drawn different class.
inline void add_symmetric_noise(Corpus& corpus, double rate, std::size_t num_classes, std::uint64_t seed)
{
    Rng rng(seed);
    for (auto& ex : corpus) {
        if (!ex.label || !rng.bernoulli(rate)) continue;
        const auto shift = 1 + rng.below(num_classes - 1);
        ex.label = static_cast<int>((static_cast<std::size_t>(*ex.label) + shift) % num_classes);
    }
}

} // namespace rft
