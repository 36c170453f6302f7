#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace rft {

/// Task-free child-tuning: gradients are multiplied by a fresh Bernoulli(p_f) mask every step.
struct MaskConfig {
    double p_f = 0.3;
    std::uint64_t seed = 0;
    /// Comma-separated globs over parameter names.
    std::string target = "*";

    void validate() const
    {
        if (!(p_f > 0.0 && p_f <= 1.0)) throw Error("childtune.p_f must lie in (0, 1], got " + std::to_string(p_f));
    }
};

struct MaskTensor {
    Shape shape;
    std::vector<std::uint8_t> values;

    [[nodiscard]] std::size_t ones() const
    {
        std::size_t n = 0;
        for (auto v : values) n += v;
        return n;
    }

    friend bool operator==(const MaskTensor&, const MaskTensor&) = default;
};

/// Parameter name -> 0/1 mask of the same shape.
using GradientMask = std::map<std::string, MaskTensor>;

/// Independent Bernoulli(p_f) entries for every shape whose name matches the target. Each tensor draws from
/// its own stream keyed by (seed, step, name), so the mask does not depend on which other tensors exist.
inline GradientMask sample_mask(const std::map<std::string, Shape>& shapes, const MaskConfig& config,
                                std::uint64_t step)
{
    config.validate();
    GradientMask mask;
    for (const auto& [name, shape] : shapes) {
        if (!name_matches(config.target, name)) continue;
        MaskTensor m{shape, std::vector<std::uint8_t>(shape_size(shape), 1)};
        if (config.p_f < 1.0) {
            Rng rng(derive_seed(config.seed, {streams::mask, step, hash_name(name)}));
            for (auto& v : m.values) v = rng.bernoulli(config.p_f) ? 1 : 0;
        }
        mask.emplace(name, std::move(m));
    }
    return mask;
}

inline std::map<std::string, Shape> shapes_of(const TensorMap& tensors)
{
    std::map<std::string, Shape> shapes;
    for (const auto& [name, t] : tensors) shapes.emplace(name, t.shape);
    return shapes;
}

/// Elementwise product with the mask; tensors without a mask entry pass through. No 1/p_f rescaling.
inline Gradients apply_mask(Gradients grads, const GradientMask& mask)
{
    for (const auto& [name, m] : mask) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        if (it->second.shape != m.shape)
            throw Error("mask shape " + shape_string(m.shape) + " does not match gradient '" + name + "' shape " +
                        shape_string(it->second.shape));
        auto& values = it->second.values;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!m.values[i]) values[i] = 0.0;
    }
    return grads;
}

} // namespace rft
