#pragma once

#include <string>

#include "model.hpp"
#include "tensor.hpp"

namespace rft {

/// Fast Gradient Method on embedding parameters.
struct FgmConfig {
    double epsilon = 1.0;
    /// Comma-separated globs over parameter names.
    std::string target = Classifier::token_embedding;
    /// Tensors whose gradient norm is at or below this are left untouched.
    double norm_floor = 1e-12;

    void validate() const
    {
        if (!(epsilon >= 0.0)) throw Error("fgm.epsilon must be >= 0");
        if (!(norm_floor >= 0.0)) throw Error("fgm norm_floor must be >= 0");
    }
};

/// Copies of the attacked tensors, taken before perturbation.
struct PerturbationBackup {
    TensorMap saved;
};

/// Moves each targeted tensor by epsilon * g / ||g||_2 (one norm per tensor) and returns the originals.
inline PerturbationBackup attack(Parameters& params, const Gradients& grads, const FgmConfig& config)
{
    config.validate();
    const auto names = select_names(params, config.target);
    if (names.empty()) throw Error("fgm target '" + config.target + "' matches no parameter");
    PerturbationBackup backup;
    for (const auto& name : names) {
        Tensor& t = params.at(name);
        const Tensor& g = tensor_at(grads, name);
        if (g.shape != t.shape) throw Error("gradient shape mismatch for '" + name + "'");
        backup.saved.emplace(name, t);
        const double norm = l2_norm(g);
        if (norm <= config.norm_floor || config.epsilon == 0.0) continue;
        const double step = config.epsilon / norm;
        for (std::size_t i = 0; i < t.size(); ++i) t.values[i] += step * g.values[i];
    }
    return backup;
}

/// Puts every attacked tensor back to its saved value, bit for bit.
inline void restore(Parameters& params, const PerturbationBackup& backup)
{
    for (const auto& [name, saved] : backup.saved) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("cannot restore '" + name + "': no such parameter");
        if (it->second.shape != saved.shape)
            throw Error("cannot restore '" + name + "': backup shape " + shape_string(saved.shape) +
                        " differs from parameter shape " + shape_string(it->second.shape));
        it->second.values = saved.values;
    }
}

struct AdversarialResult {
    Gradients gradients; ///< clean + perturbed
    double clean_loss = 0.0;
    double perturbed_loss = 0.0;
};

/// Clean backward, attack, perturbed backward, restore; returns the summed gradients.
/// Both passes share `dropout_seed`, so with epsilon 0 the result is exactly twice the clean gradient.
inline AdversarialResult adversarial_step(const Classifier& model, Parameters& params, const TokenizedBatch& batch,
                                          const LossConfig& loss, const FgmConfig& config, bool train_mode = true,
                                          std::uint64_t dropout_seed = 0)
{
    auto clean = model.backward(params, batch, loss, train_mode, dropout_seed);
    const auto backup = attack(params, clean.gradients, config);
    AdversarialResult out;
    try {
        auto perturbed = model.backward(params, batch, loss, train_mode, dropout_seed);
        restore(params, backup);
        out.perturbed_loss = perturbed.loss;
        out.gradients = std::move(clean.gradients);
        accumulate(out.gradients, perturbed.gradients);
    } catch (...) {
        restore(params, backup);
        throw;
    }
    out.clean_loss = clean.loss;
    return out;
}

} // namespace rft
