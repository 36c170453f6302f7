#pragma once

#include <numeric>
#include <optional>
#include <vector>

#include <robust_finetune/corpus.hpp>
#include <robust_finetune/model.hpp>

namespace rft::test {

inline EncoderConfig tiny_encoder(double dropout = 0.0, std::size_t num_classes = 5)
{
    EncoderConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.hidden_dim = 8;
    c.ff_dim = 12;
    c.vocab_size = 20;
    c.max_positions = 10;
    c.num_classes = num_classes;
    c.dropout_rate = dropout;
    c.seed = 3;
    return c;
}

inline TokenizedBatch batch_of(const std::vector<std::vector<int>>& seqs, std::vector<int> labels = {})
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

} // namespace rft::test
