#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tensor.hpp"

namespace rft {

/// Linear warm-up from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
struct ScheduleConfig {
    double peak_lr = 1e-5;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    void validate() const
    {
        if (!(peak_lr > 0.0)) throw Error("schedule.peak_lr must be > 0");
        if (warmup_steps > total_steps) throw Error("warmup_steps must not exceed total_steps");
    }
};

inline double lr_at(std::size_t step, const ScheduleConfig& schedule)
{
    schedule.validate();
    if (step > schedule.total_steps)
        throw Error("step " + std::to_string(step) + " is past the end of the schedule (" +
                    std::to_string(schedule.total_steps) + " steps)");
    if (step < schedule.warmup_steps)
        return schedule.peak_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
    const auto decay = schedule.total_steps - schedule.warmup_steps;
    if (decay == 0) return schedule.peak_lr;
    return schedule.peak_lr * static_cast<double>(schedule.total_steps - step) / static_cast<double>(decay);
}

/// Rescales every gradient by threshold / norm when the global L2 norm exceeds `threshold`.
inline Gradients clip_gradients(Gradients grads, double threshold)
{
    if (!(threshold > 0.0)) throw Error("clip threshold must be > 0");
    const double norm = global_norm(grads);
    if (norm > threshold) {
        const double scale = threshold / norm;
        for (auto& [name, g] : grads)
            for (double& v : g.values) v *= scale;
    }
    return grads;
}

/// AdamW moments and hyperparameters. Moments are created on first use, one pair per tensor.
struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::uint64_t step = 0;
    TensorMap first_moment;
    TensorMap second_moment;
};

/// w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w, for every tensor in `grads`.
inline void adamw_step(Parameters& params, const Gradients& grads, OptimizerState& state, double lr)
{
    for (const auto& [name, g] : grads) {
        if (!all_finite(g)) throw Error("non-finite gradient in tensor '" + name + "'");
        if (tensor_at(params, name).shape != g.shape) throw Error("gradient shape mismatch for '" + name + "'");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (const auto& [name, g] : grads) {
        Tensor& w = params.at(name);
        auto [m_it, m_new] = state.first_moment.try_emplace(name, Tensor::zeros(g.shape));
        auto [v_it, v_new] = state.second_moment.try_emplace(name, Tensor::zeros(g.shape));
        auto& m = m_it->second.values;
        auto& v = v_it->second.values;
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g.values[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g.values[i] * g.values[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            w.values[i] -= lr * (m_hat / (std::sqrt(v_hat) + state.eps)) + lr * state.weight_decay * w.values[i];
        }
    }
}

} // namespace rft
