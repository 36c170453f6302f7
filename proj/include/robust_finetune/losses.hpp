#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tensor.hpp"

namespace rft {

/// Weights of the incomplete-trust loss: alpha * CE + beta * DCE, with DCE mixing model belief and label by delta.
struct InTrustParams {
    double alpha = 1.0;
    double beta = 1.0;
    double delta = 0.5;
    double clamp_eps = 1e-12;

    void validate() const
    {
        if (!(alpha >= 0.0)) throw Error("in-trust alpha must be >= 0");
        if (!(beta >= 0.0)) throw Error("in-trust beta must be >= 0");
        if (!(delta >= 0.0 && delta <= 1.0)) throw Error("in-trust delta must lie in [0, 1]");
        if (!(clamp_eps > 0.0)) throw Error("in-trust clamp_eps must be > 0");
    }
};

enum class LossKind { cross_entropy, in_trust };

inline std::string_view to_string(LossKind k) { return k == LossKind::cross_entropy ? "ce" : "in_trust"; }

inline LossKind parse_loss_kind(std::string_view s)
{
    if (s == "ce") return LossKind::cross_entropy;
    if (s == "in_trust") return LossKind::in_trust;
    throw Error("unknown loss kind '" + std::string(s) + "' (expected ce or in_trust)");
}

struct LossConfig {
    LossKind kind = LossKind::cross_entropy;
    InTrustParams in_trust{};
};

namespace detail {
inline void check_lengths(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size())
        throw Error("probability/label length mismatch: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
}
} // namespace detail

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double m = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double& v : p) z += (v = std::exp(v - m));
    for (double& v : p) v /= z;
    return p;
}

inline std::vector<double> one_hot(int label, std::size_t num_classes)
{
    std::vector<double> q(num_classes, 0.0);
    q.at(static_cast<std::size_t>(label)) = 1.0;
    return q;
}

/// -sum q_i log(max(p_i, eps))
inline double cross_entropy(std::span<const double> p, std::span<const double> q, double clamp_eps = 1e-12)
{
    detail::check_lengths(p, q);
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (q[i] != 0.0) loss -= q[i] * std::log(std::max(p[i], clamp_eps));
    return loss;
}

/// -sum p_i log(max(delta p_i + (1 - delta) q_i, eps))
inline double dce(std::span<const double> p, std::span<const double> q, double delta, double clamp_eps = 1e-12)
{
    detail::check_lengths(p, q);
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        loss -= p[i] * std::log(std::max(delta * p[i] + (1.0 - delta) * q[i], clamp_eps));
    }
    return loss;
}

inline double in_trust(std::span<const double> p, std::span<const double> q, const InTrustParams& params)
{
    double loss = params.alpha * cross_entropy(p, q, params.clamp_eps);
    if (params.beta != 0.0) loss += params.beta * dce(p, q, params.delta, params.clamp_eps);
    return loss;
}

inline double loss_value(const LossConfig& config, std::span<const double> p, std::span<const double> q)
{
    return config.kind == LossKind::cross_entropy ? cross_entropy(p, q, config.in_trust.clamp_eps)
                                                  : in_trust(p, q, config.in_trust);
}

/// d(loss)/d(p), treating p as free (the clamp floors have zero slope).
inline std::vector<double> loss_grad_probs(const LossConfig& config, std::span<const double> p,
                                           std::span<const double> q)
{
    detail::check_lengths(p, q);
    const auto& ip = config.in_trust;
    const double ce_weight = config.kind == LossKind::cross_entropy ? 1.0 : ip.alpha;
    const double dce_weight = config.kind == LossKind::cross_entropy ? 0.0 : ip.beta;
    std::vector<double> g(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (q[i] != 0.0 && p[i] > ip.clamp_eps) g[i] -= ce_weight * q[i] / p[i];
        if (dce_weight != 0.0) {
            const double mix = ip.delta * p[i] + (1.0 - ip.delta) * q[i];
            if (mix > ip.clamp_eps) g[i] -= dce_weight * (std::log(mix) + p[i] * ip.delta / mix);
            else g[i] -= dce_weight * std::log(ip.clamp_eps);
        }
    }
    return g;
}

/// d(loss)/d(logits) through the softmax Jacobian: dz_j = p_j (g_j - sum_i p_i g_i).
inline std::vector<double> loss_grad_logits(const LossConfig& config, std::span<const double> logits,
                                            std::span<const double> q)
{
    const auto p = softmax(logits);
    if (config.kind == LossKind::cross_entropy) {
        // p - q, exact whenever the true-class probability is above the clamp floor
        bool clamped = false;
        for (std::size_t i = 0; i < p.size(); ++i) clamped |= q[i] != 0.0 && p[i] <= config.in_trust.clamp_eps;
        if (!clamped) {
            detail::check_lengths(p, q);
            std::vector<double> g(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] - q[i];
            return g;
        }
    }
    const auto g = loss_grad_probs(config, p, q);
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * g[i];
    std::vector<double> dz(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (g[i] - dot);
    return dz;
}

} // namespace rft
