#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csv.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rft {

struct LabeledExample {
    std::string id;
    std::string text;
    std::optional<int> label;

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

using Corpus = std::vector<LabeledExample>;

/// Ordered class names; index <-> name is a bijection.
class LabelSet {
public:
    LabelSet() = default;

    explicit LabelSet(std::vector<std::string> names) : names_(std::move(names))
    {
        if (names_.size() < 2) throw Error("a label set needs at least two classes");
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].empty()) throw Error("empty class name at index " + std::to_string(i));
            if (!index_.emplace(names_[i], static_cast<int>(i)).second)
                throw Error("duplicate class name '" + names_[i] + "'");
        }
    }

    /// "Human" plus the thirteen generator models of the multi-class detection task.
    static LabelSet default_set()
    {
        return LabelSet({"Human", "M2M-100", "OPUS-MT", "mBART", "mT5-Large", "mT5-Small", "ruGPT2-Large",
                         "ruGPT3-Large", "ruGPT3-Medium", "ruGPT3-Small", "ruT5-Base", "ruT5-Base-Multitask",
                         "ruT5-Large", "ruT5-Small"});
    }

    /// Generic names "class0".."class{n-1}".
    static LabelSet numbered(std::size_t n)
    {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n; ++i) names.push_back("class" + std::to_string(i));
        return LabelSet(std::move(names));
    }

    [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }

    [[nodiscard]] std::optional<int> find(std::string_view name) const
    {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Accepts either a class name or a decimal index.
    [[nodiscard]] std::optional<int> parse(std::string_view value) const
    {
        if (auto by_name = find(value)) return by_name;
        int idx = 0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), idx);
        if (ec == std::errc{} && ptr == value.data() + value.size() && idx >= 0 &&
            static_cast<std::size_t>(idx) < names_.size())
            return idx;
        return std::nullopt;
    }

    /// One name per line.
    void save(const std::string& path) const
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write label file '" + path + "'");
        for (const auto& n : names_) out << n << '\n';
    }

    static LabelSet load(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot read label file '" + path + "'");
        std::vector<std::string> names;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) names.push_back(line);
        }
        return LabelSet(std::move(names));
    }

    friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.names_ == b.names_; }

private:
    std::vector<std::string> names_;
    std::map<std::string, int> index_;
};

struct CorpusSchema {
    std::string id_column = "id";
    std::string text_column = "text";
    std::string label_column = "label";
    char delimiter = ',';
};

/// Parse a delimiter-separated corpus with a header row. A missing label column leaves every label empty;
/// an empty label cell leaves that one label empty.
inline Corpus parse_corpus(std::istream& in, const CorpusSchema& schema, const LabelSet& labels)
{
    csv::Reader reader(in, schema.delimiter);
    auto header = reader.next();
    if (!header) throw Error("corpus is empty: missing header row");
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        auto& f = header->fields;
        auto it = std::find(f.begin(), f.end(), name);
        if (it == f.end()) return std::nullopt;
        return static_cast<std::size_t>(it - f.begin());
    };
    const auto id_col = column(schema.id_column);
    const auto text_col = column(schema.text_column);
    const auto label_col = column(schema.label_column);
    if (!id_col || !text_col)
        throw Error("line " + std::to_string(header->line) + ": header must declare '" + schema.id_column +
                    "' and '" + schema.text_column + "' columns");

    Corpus corpus;
    std::set<std::string> seen;
    while (auto rec = reader.next()) {
        if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
        if (rec->fields.size() != header->fields.size())
            throw Error("line " + std::to_string(rec->line) + ": expected " + std::to_string(header->fields.size()) +
                        " fields, found " + std::to_string(rec->fields.size()));
        LabeledExample ex;
        ex.id = rec->fields[*id_col];
        ex.text = rec->fields[*text_col];
        if (ex.id.empty()) throw Error("line " + std::to_string(rec->line) + ": empty id");
        if (!seen.insert(ex.id).second)
            throw Error("line " + std::to_string(rec->line) + ": duplicate id '" + ex.id + "'");
        if (label_col && !rec->fields[*label_col].empty()) {
            const auto& raw = rec->fields[*label_col];
            ex.label = labels.parse(raw);
            if (!ex.label)
                throw Error("line " + std::to_string(rec->line) + ": unknown label '" + raw + "' (expected one of " +
                            std::to_string(labels.size()) + " class names or an index below that)");
        }
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

inline Corpus load_corpus(const std::string& path, const CorpusSchema& schema = {},
                          const LabelSet& labels = LabelSet::default_set())
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open corpus file '" + path + "'");
    try {
        return parse_corpus(in, schema, labels);
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

/// Writes `id,text,label` (label as class index, omitted when no example is labeled).
inline void write_corpus(std::ostream& out, std::span<const LabeledExample> corpus, char delimiter = ',')
{
    const bool labeled = std::any_of(corpus.begin(), corpus.end(), [](const auto& e) { return e.label.has_value(); });
    out << "id" << delimiter << "text" << (labeled ? std::string{delimiter} + "label" : "") << '\n';
    for (const auto& ex : corpus) {
        out << csv::quote(ex.id, delimiter) << delimiter << csv::quote(ex.text, delimiter);
        if (labeled) out << delimiter << (ex.label ? std::to_string(*ex.label) : "");
        out << '\n';
    }
}

inline std::vector<std::string_view> split_whitespace(std::string_view text)
{
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) tokens.push_back(text.substr(i, j - i));
        i = j;
    }
    return tokens;
}

class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr std::string_view pad_token = "<pad>";
    static constexpr std::string_view unk_token = "<unk>";

    Vocabulary() : tokens_{std::string(pad_token), std::string(unk_token)}
    {
        index_.emplace(tokens_[0], pad_id);
        index_.emplace(tokens_[1], unk_id);
    }

    [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
    [[nodiscard]] const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    [[nodiscard]] int id_of(std::string_view token) const
    {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? unk_id : it->second;
    }

    [[nodiscard]] bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

    void add(std::string token)
    {
        if (token.empty() || contains(token)) throw Error("cannot add token '" + token + "' to vocabulary");
        index_.emplace(token, static_cast<int>(tokens_.size()));
        tokens_.push_back(std::move(token));
    }

    /// `token<TAB>id` per line, in id order.
    void save(std::ostream& out) const
    {
        for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
    }

    void save(const std::string& path) const
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write vocabulary '" + path + "'");
        save(out);
    }

    static Vocabulary load(std::istream& in)
    {
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto tab = line.rfind('\t');
            if (tab == std::string::npos || tab == 0)
                throw Error("vocabulary line " + std::to_string(lineno) + ": expected token<TAB>id");
            std::size_t id = 0;
            auto digits = std::string_view(line).substr(tab + 1);
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
            if (ec != std::errc{} || ptr != digits.data() + digits.size() || id != v.tokens_.size())
                throw Error("vocabulary line " + std::to_string(lineno) + ": ids must be consecutive from 0");
            std::string tok = line.substr(0, tab);
            if (!v.index_.emplace(tok, static_cast<int>(id)).second)
                throw Error("vocabulary line " + std::to_string(lineno) + ": duplicate token '" + tok + "'");
            v.tokens_.push_back(std::move(tok));
        }
        if (v.tokens_.size() < 2 || v.tokens_[0] != pad_token || v.tokens_[1] != unk_token)
            throw Error("vocabulary must start with <pad> (id 0) and <unk> (id 1)");
        return v;
    }

    static Vocabulary load(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot read vocabulary '" + path + "'");
        return load(in);
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Frequency-ranked vocabulary (ties broken lexicographically), capped at `max_size` including PAD and UNK.
inline Vocabulary build_vocab(std::span<const LabeledExample> corpus, std::size_t max_size)
{
    if (corpus.empty()) throw Error("cannot build a vocabulary from an empty corpus");
    if (max_size < 3) throw Error("vocabulary max_size must be at least 3 (PAD, UNK and one token)");
    std::unordered_map<std::string_view, std::size_t> counts;
    for (const auto& ex : corpus)
        for (auto tok : split_whitespace(ex.text)) ++counts[tok];
    std::vector<std::pair<std::string_view, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, n] : ranked) {
        if (vocab.size() >= max_size) break;
        if (vocab.contains(tok)) continue;
        vocab.add(std::string(tok));
    }
    return vocab;
}

/// Whitespace tokens mapped to ids (UNK when absent); the excess beyond `max_length` is dropped.
inline std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_length)
{
    if (max_length < 1) throw Error("max_length must be at least 1");
    std::vector<int> ids;
    for (auto tok : split_whitespace(text)) {
        if (ids.size() == max_length) break;
        const int id = vocab.id_of(tok);
        // a literal "<pad>" in the text must not look like padding
        ids.push_back(id == Vocabulary::pad_id ? Vocabulary::unk_id : id);
    }
    return ids;
}

/// Token ids [B x L] padded with PAD, mask [B x L], optional labels [B].
struct TokenizedBatch {
    std::size_t batch_size = 0;
    std::size_t length = 0;
    std::vector<int> token_ids;
    std::vector<std::uint8_t> mask;
    std::optional<std::vector<int>> labels;
    /// Position of each row in the source corpus.
    std::vector<std::size_t> example_indices;

    [[nodiscard]] int token(std::size_t b, std::size_t t) const { return token_ids[b * length + t]; }
    [[nodiscard]] bool active(std::size_t b, std::size_t t) const { return mask[b * length + t] != 0; }
};

/// A corpus tokenized once; batches are cut from it.
struct TokenizedCorpus {
    std::vector<std::vector<int>> sequences;
    std::vector<std::optional<int>> labels;

    [[nodiscard]] std::size_t size() const noexcept { return sequences.size(); }
};

inline TokenizedCorpus tokenize_corpus(std::span<const LabeledExample> corpus, const Vocabulary& vocab,
                                       std::size_t max_length)
{
    TokenizedCorpus out;
    out.sequences.reserve(corpus.size());
    for (const auto& ex : corpus) {
        out.sequences.push_back(tokenize(ex.text, vocab, max_length));
        out.labels.push_back(ex.label);
    }
    return out;
}

/// Batch of the given corpus rows, padded to the longest. Labels are attached only when every row has one.
inline TokenizedBatch make_batch(const TokenizedCorpus& corpus, std::span<const std::size_t> indices)
{
    TokenizedBatch batch;
    batch.batch_size = indices.size();
    for (auto i : indices) batch.length = std::max(batch.length, corpus.sequences.at(i).size());
    batch.token_ids.assign(batch.batch_size * batch.length, Vocabulary::pad_id);
    batch.mask.assign(batch.batch_size * batch.length, 0);
    bool labeled = true;
    std::vector<int> labels;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& seq = corpus.sequences[indices[b]];
        for (std::size_t t = 0; t < seq.size(); ++t) {
            batch.token_ids[b * batch.length + t] = seq[t];
            batch.mask[b * batch.length + t] = seq[t] != Vocabulary::pad_id ? 1 : 0;
        }
        const auto& label = corpus.labels[indices[b]];
        if (label) labels.push_back(*label);
        else labeled = false;
        batch.example_indices.push_back(indices[b]);
    }
    if (labeled && !indices.empty()) batch.labels = std::move(labels);
    return batch;
}

/// Row order for one epoch: identity, or a Fisher-Yates shuffle seeded by `seed`.
inline std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(seed);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

/// Yields one epoch of batches; the final short batch is kept.
class BatchStream {
public:
    BatchStream(const TokenizedCorpus& corpus, std::size_t batch_size, bool shuffle, std::uint64_t seed)
        : corpus_(corpus), batch_size_(batch_size), order_(epoch_order(corpus.size(), shuffle, seed))
    {
        if (batch_size < 1) throw Error("batch_size must be at least 1");
    }

    std::optional<TokenizedBatch> next()
    {
        if (pos_ >= order_.size()) return std::nullopt;
        const auto n = std::min(batch_size_, order_.size() - pos_);
        auto batch = make_batch(corpus_, std::span(order_).subspan(pos_, n));
        pos_ += n;
        return batch;
    }

    [[nodiscard]] std::size_t batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

private:
    const TokenizedCorpus& corpus_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Convenience form of BatchStream that materializes the whole epoch.
inline std::vector<TokenizedBatch> batches(std::span<const LabeledExample> corpus, const Vocabulary& vocab,
                                           std::size_t batch_size, std::size_t max_length,
                                           std::optional<std::uint64_t> shuffle_seed)
{
    const auto tokenized = tokenize_corpus(corpus, vocab, max_length);
    BatchStream stream(tokenized, batch_size, shuffle_seed.has_value(), shuffle_seed.value_or(0));
    std::vector<TokenizedBatch> out;
    while (auto b = stream.next()) out.push_back(std::move(*b));
    return out;
}

} // namespace rft
