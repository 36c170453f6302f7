#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rft {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/// Eigen picks its vectorized code path from the runtime address of the data, so storage is always
/// allocated on the same boundary to keep results bit-identical from one allocation to the next.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major tensor of doubles. Rank 1 and 2 are all the model needs.
struct Tensor {
    Shape shape;
    Storage values;

    static Tensor zeros(Shape shape)
    {
        Tensor t;
        t.values.assign(shape_size(shape), 0.0);
        t.shape = std::move(shape);
        return t;
    }

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    /// Rank-1 tensors are treated as a single row.
    [[nodiscard]] std::size_t rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
    [[nodiscard]] std::size_t cols() const noexcept { return shape.size() == 2 ? shape[1] : size(); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered so iteration (and therefore every reduction and RNG draw) is deterministic.
using TensorMap = std::map<std::string, Tensor>;
/// Model state: tensor-name to values.
using Parameters = TensorMap;
/// Same keys and shapes as the Parameters they were computed for.
using Gradients = TensorMap;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Rank-2 view; a rank-1 tensor is viewed as a single row.
inline MatrixMap as_matrix(Tensor& t)
{
    return {t.values.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline ConstMatrixMap as_matrix(const Tensor& t)
{
    return {t.values.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline VectorMap as_vector(Tensor& t) { return {t.values.data(), static_cast<Eigen::Index>(t.size())}; }
inline ConstVectorMap as_vector(const Tensor& t)
{
    return {t.values.data(), static_cast<Eigen::Index>(t.size())};
}

inline double l2_norm(const Tensor& t)
{
    double sq = 0.0;
    for (double v : t.values) sq += v * v;
    return std::sqrt(sq);
}

/// L2 norm over the concatenation of every tensor in the map.
inline double global_norm(const TensorMap& tensors)
{
    double sq = 0.0;
    for (const auto& [name, t] : tensors)
        for (double v : t.values) sq += v * v;
    return std::sqrt(sq);
}

inline bool all_finite(const Tensor& t)
{
    for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
}

inline const Tensor& tensor_at(const TensorMap& map, const std::string& name)
{
    auto it = map.find(name);
    if (it == map.end()) throw Error("no tensor named '" + name + "'");
    return it->second;
}

inline Tensor& tensor_at(TensorMap& map, const std::string& name)
{
    auto it = map.find(name);
    if (it == map.end()) throw Error("no tensor named '" + name + "'");
    return it->second;
}

/// Zero tensors with the same names and shapes as `like`.
inline TensorMap zeros_like(const TensorMap& like)
{
    TensorMap out;
    for (const auto& [name, t] : like) out.emplace(name, Tensor::zeros(t.shape));
    return out;
}

/// `target += source`, requiring identical keys and shapes.
inline void accumulate(TensorMap& target, const TensorMap& source)
{
    for (const auto& [name, t] : source) {
        Tensor& dst = tensor_at(target, name);
        if (dst.shape != t.shape) throw Error("shape mismatch accumulating '" + name + "'");
        for (std::size_t i = 0; i < t.size(); ++i) dst.values[i] += t.values[i];
    }
}

/// Shell-style glob match supporting `*` and `?`.
inline bool glob_match(std::string_view pattern, std::string_view text)
{
    std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

/// True when `name` matches any of the comma-separated globs in `patterns`.
inline bool name_matches(std::string_view patterns, std::string_view name)
{
    std::size_t start = 0;
    while (start <= patterns.size()) {
        auto end = patterns.find(',', start);
        if (end == std::string_view::npos) end = patterns.size();
        auto glob = patterns.substr(start, end - start);
        while (!glob.empty() && glob.front() == ' ') glob.remove_prefix(1);
        while (!glob.empty() && glob.back() == ' ') glob.remove_suffix(1);
        if (!glob.empty() && glob_match(glob, name)) return true;
        start = end + 1;
    }
    return false;
}

inline std::vector<std::string> select_names(const TensorMap& map, std::string_view patterns)
{
    std::vector<std::string> names;
    for (const auto& [name, t] : map)
        if (name_matches(patterns, name)) names.push_back(name);
    return names;
}

/// Round every value to the nearest 32-bit float, the checkpoint storage precision.
inline void round_to_float(TensorMap& tensors)
{
    for (auto& [name, t] : tensors)
        for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
}

} // namespace rft
