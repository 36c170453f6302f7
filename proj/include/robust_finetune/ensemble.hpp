#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"
#include "csv.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rft {

struct PredictionRow {
    std::string id;
    int label = 0;
    std::vector<double> probabilities; ///< empty when not recorded

    friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

struct PredictionTable {
    std::vector<PredictionRow> rows;

    [[nodiscard]] bool has_probabilities() const
    {
        return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return !r.probabilities.empty(); });
    }

    /// Ids unique; probability rows (when present) of one length and summing to 1 within 1e-6.
    void validate() const
    {
        std::set<std::string_view> ids;
        std::optional<std::size_t> width;
        for (const auto& r : rows) {
            if (!ids.insert(r.id).second) throw Error("duplicate id '" + r.id + "' in prediction table");
            if (r.probabilities.empty()) continue;
            if (width && *width != r.probabilities.size())
                throw Error("row '" + r.id + "' has a different number of probabilities");
            width = r.probabilities.size();
            double s = 0.0;
            for (double p : r.probabilities) s += p;
            if (std::abs(s - 1.0) > 1e-6) throw Error("probabilities of row '" + r.id + "' do not sum to 1");
        }
    }

    friend bool operator==(const PredictionTable&, const PredictionTable&) = default;
};

/// Header `id,class[,p0..p{C-1}]`; probabilities printed with 17 significant digits.
inline void write_predictions(std::ostream& out, const PredictionTable& table, bool with_probabilities)
{
    std::size_t width = 0;
    if (with_probabilities) {
        if (!table.has_probabilities() && !table.rows.empty())
            throw Error("prediction table has no probabilities to write");
        width = table.rows.empty() ? 0 : table.rows.front().probabilities.size();
    }
    out << "id,class";
    for (std::size_t i = 0; i < width; ++i) out << ",p" << i;
    out << '\n';
    char buf[40];
    for (const auto& r : table.rows) {
        out << csv::quote(r.id) << ',' << r.label;
        for (std::size_t i = 0; i < width; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", r.probabilities[i]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline void write_predictions(const std::string& path, const PredictionTable& table, bool with_probabilities)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write predictions '" + path + "'");
    write_predictions(out, table, with_probabilities);
}

inline PredictionTable read_predictions(std::istream& in)
{
    csv::Reader reader(in);
    auto header = reader.next();
    if (!header || header->fields.size() < 2 || header->fields[0] != "id" || header->fields[1] != "class")
        throw Error("prediction file must start with header id,class[,p0..]");
    const std::size_t width = header->fields.size() - 2;
    for (std::size_t i = 0; i < width; ++i)
        if (header->fields[i + 2] != "p" + std::to_string(i))
            throw Error("prediction header column " + std::to_string(i + 3) + " must be p" + std::to_string(i));
    PredictionTable table;
    while (auto rec = reader.next()) {
        if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
        if (rec->fields.size() != header->fields.size())
            throw Error("line " + std::to_string(rec->line) + ": expected " + std::to_string(header->fields.size()) +
                        " fields");
        PredictionRow row;
        row.id = rec->fields[0];
        try {
            std::size_t used = 0;
            row.label = std::stoi(rec->fields[1], &used);
            if (used != rec->fields[1].size() || row.label < 0) throw std::invalid_argument("class");
            for (std::size_t i = 0; i < width; ++i) row.probabilities.push_back(std::stod(rec->fields[i + 2]));
        } catch (const std::logic_error&) {
            throw Error("line " + std::to_string(rec->line) + ": malformed class or probability value");
        }
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

inline PredictionTable read_predictions(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open prediction file '" + path + "'");
    try {
        return read_predictions(in);
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

enum class TieRule {
    /// Highest mean probability among tied classes when every table carries probabilities, else lowest index.
    mean_probability,
    lowest_index,
};

inline TieRule parse_tie_rule(std::string_view s)
{
    if (s == "mean-prob") return TieRule::mean_probability;
    if (s == "lowest-index") return TieRule::lowest_index;
    throw Error("unknown tie rule '" + std::string(s) + "' (expected mean-prob or lowest-index)");
}

/// Per-id plurality vote across tables; output rows follow the first table's order and carry the mean
/// probability vector when every table has one.
inline PredictionTable majority_vote(std::span<const PredictionTable> tables, TieRule tie_rule = TieRule::mean_probability)
{
    if (tables.empty()) throw Error("majority_vote needs at least one prediction table");
    const auto& first = tables.front();
    std::map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < first.rows.size(); ++i) position.emplace(first.rows[i].id, i);
    if (position.size() != first.rows.size()) throw Error("duplicate ids in prediction table 1");

    // row lookup per table, checking the id sets are identical
    std::vector<std::vector<const PredictionRow*>> aligned(tables.size(),
                                                           std::vector<const PredictionRow*>(first.rows.size()));
    for (std::size_t t = 0; t < tables.size(); ++t) {
        if (tables[t].rows.size() != first.rows.size()) {
            // name an id present in one table but not the other
            std::set<std::string_view> ids;
            for (const auto& r : tables[t].rows) ids.insert(r.id);
            for (const auto& r : first.rows)
                if (!ids.count(r.id))
                    throw Error("id '" + r.id + "' missing from prediction table " + std::to_string(t + 1));
            for (const auto& r : tables[t].rows)
                if (!position.count(r.id))
                    throw Error("id '" + r.id + "' in prediction table " + std::to_string(t + 1) +
                                " is missing from table 1");
            throw Error("prediction table " + std::to_string(t + 1) + " repeats ids");
        }
        for (const auto& r : tables[t].rows) {
            auto it = position.find(r.id);
            if (it == position.end())
                throw Error("id '" + r.id + "' in prediction table " + std::to_string(t + 1) + " is missing from table 1");
            if (aligned[t][it->second]) throw Error("id '" + r.id + "' repeated in table " + std::to_string(t + 1));
            aligned[t][it->second] = &r;
        }
    }

    const bool probs = std::all_of(tables.begin(), tables.end(), [](const auto& t) { return t.has_probabilities(); });
    PredictionTable out;
    for (std::size_t i = 0; i < first.rows.size(); ++i) {
        std::map<int, std::size_t> votes;
        for (std::size_t t = 0; t < tables.size(); ++t) ++votes[aligned[t][i]->label];
        std::size_t top = 0;
        for (const auto& [cls, n] : votes) top = std::max(top, n);
        std::vector<int> tied;
        for (const auto& [cls, n] : votes)
            if (n == top) tied.push_back(cls); // ascending class order

        PredictionRow row;
        row.id = first.rows[i].id;
        if (probs) {
            const auto width = aligned[0][i]->probabilities.size();
            row.probabilities.assign(width, 0.0);
            for (std::size_t t = 0; t < tables.size(); ++t)
                if (aligned[t][i]->probabilities.size() != width)
                    throw Error("probability width differs for id '" + row.id + "'");
            // summed in sorted order so the mean does not depend on the order of the tables
            std::vector<double> column(tables.size());
            for (std::size_t c = 0; c < width; ++c) {
                for (std::size_t t = 0; t < tables.size(); ++t) column[t] = aligned[t][i]->probabilities[c];
                std::sort(column.begin(), column.end());
                double sum = 0.0;
                for (double v : column) sum += v;
                row.probabilities[c] = sum / static_cast<double>(tables.size());
            }
        }
        row.label = tied.front();
        if (tied.size() > 1 && tie_rule == TieRule::mean_probability && probs) {
            double best = -1.0;
            for (int cls : tied) {
                const auto c = static_cast<std::size_t>(cls);
                const double mp = c < row.probabilities.size() ? row.probabilities[c] : 0.0;
                if (mp > best) {
                    best = mp;
                    row.label = cls;
                }
            }
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

/// Row indices of k resamples of an n-row corpus, each drawn uniformly with replacement.
inline std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t n, std::size_t k, std::uint64_t seed)
{
    if (n == 0) throw Error("cannot bootstrap an empty corpus");
    if (k < 1) throw Error("bootstrap needs k >= 1");
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t m = 0; m < k; ++m) {
        Rng rng(derive_seed(seed, {streams::bootstrap, m}));
        out[m].resize(n);
        for (auto& idx : out[m]) idx = rng.below(n);
    }
    return out;
}

/// k training corpora, each the size of `corpus`. With `resample` off every member gets the corpus unchanged.
/// Resampled rows get `#<row>` appended to their id so ids stay unique within a member.
inline std::vector<Corpus> bootstrap_split(std::span<const LabeledExample> corpus, std::size_t k, std::uint64_t seed,
                                           bool resample = true)
{
    if (corpus.empty()) throw Error("cannot bootstrap an empty corpus");
    if (k < 1) throw Error("bootstrap needs k >= 1");
    if (!resample) return std::vector<Corpus>(k, Corpus(corpus.begin(), corpus.end()));
    std::vector<Corpus> out;
    for (const auto& indices : bootstrap_indices(corpus.size(), k, seed)) {
        Corpus sample;
        sample.reserve(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            auto ex = corpus[indices[i]];
            ex.id += "#" + std::to_string(i);
            sample.push_back(std::move(ex));
        }
        out.push_back(std::move(sample));
    }
    return out;
}

} // namespace rft
