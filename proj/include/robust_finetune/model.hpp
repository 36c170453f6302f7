#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "losses.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace rft {

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t hidden_dim = 64;
    std::size_t ff_dim = 128;
    std::size_t vocab_size = 0;
    std::size_t max_positions = 280;
    std::size_t num_classes = 14;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t head_dim() const { return hidden_dim / num_heads; }

    void validate() const
    {
        if (num_layers < 1) throw Error("model.num_layers must be >= 1");
        if (num_heads < 1 || hidden_dim < 1 || hidden_dim % num_heads != 0)
            throw Error("model.hidden_dim (" + std::to_string(hidden_dim) + ") must be divisible by model.num_heads (" +
                        std::to_string(num_heads) + ")");
        if (ff_dim < 1) throw Error("model.ff_dim must be >= 1");
        if (vocab_size < 3) throw Error("model vocab_size must be >= 3");
        if (max_positions < 1) throw Error("model.max_positions must be >= 1");
        if (num_classes < 2) throw Error("model.num_classes must be >= 2");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("model.dropout must lie in [0, 1)");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Lowest index wins ties.
inline int argmax(std::span<const double> values)
{
    return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

struct ClassPrediction {
    int label = 0;
    std::vector<double> probabilities;
};

namespace detail {

using RowVector = Eigen::RowVectorXd;

inline constexpr double layer_norm_eps = 1e-5;

struct LayerNormCache {
    RowMatrix normalized;
    Eigen::VectorXd inv_std;
};

struct LayerCache {
    RowMatrix input;
    LayerNormCache attn_norm;
    RowMatrix attn_in;
    RowMatrix query, key, value;
    std::vector<RowMatrix> attention;
    RowMatrix context;
    RowMatrix attn_drop;
    RowMatrix mid;
    LayerNormCache ffn_norm;
    RowMatrix ffn_in;
    RowMatrix pre_act;
    RowMatrix act;
    RowMatrix ffn_drop;
};

struct ExampleCache {
    std::vector<int> ids;
    std::vector<int> positions;
    RowMatrix emb_drop;
    std::vector<LayerCache> layers;
    LayerNormCache final_norm;
    RowMatrix final_out;
    RowVector pooled;
    RowVector pooler_out;
    RowMatrix pool_drop; ///< 1 x H, empty when dropout is off
    RowVector head_in;
};

inline RowMatrix layer_norm(const RowMatrix& x, const Tensor& gain, const Tensor& bias, LayerNormCache& cache)
{
    const auto n = x.rows();
    const auto h = static_cast<double>(x.cols());
    cache.normalized.resize(n, x.cols());
    cache.inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).sum() / h;
        const double var = (x.row(i).array() - mean).square().sum() / h;
        cache.inv_std(i) = 1.0 / std::sqrt(var + layer_norm_eps);
        cache.normalized.row(i) = (x.row(i).array() - mean) * cache.inv_std(i);
    }
    RowMatrix y = cache.normalized.array().rowwise() * as_matrix(gain).row(0).array();
    y.rowwise() += as_matrix(bias).row(0);
    return y;
}

inline RowMatrix layer_norm_backward(const RowMatrix& dy, const Tensor& gain, const LayerNormCache& cache,
                                     Tensor& dgain, Tensor& dbias)
{
    const auto& xhat = cache.normalized;
    as_matrix(dgain).row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    as_matrix(dbias).row(0) += dy.colwise().sum();
    RowMatrix dxhat = dy.array().rowwise() * as_matrix(gain).row(0).array();
    const double h = static_cast<double>(dy.cols());
    RowMatrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_d = dxhat.row(i).sum() / h;
        const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / h;
        dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
    }
    return dx;
}

inline RowMatrix dense(const RowMatrix& x, const Tensor& weight, const Tensor& bias)
{
    RowMatrix y = x * as_matrix(weight);
    y.rowwise() += as_matrix(bias).row(0);
    return y;
}

/// Accumulates dW, db and returns dx.
inline RowMatrix dense_backward(const RowMatrix& x, const RowMatrix& dy, const Tensor& weight, Tensor& dweight,
                                Tensor& dbias)
{
    as_matrix(dweight).noalias() += x.transpose() * dy;
    as_matrix(dbias).row(0) += dy.colwise().sum();
    return dy * as_matrix(weight).transpose();
}

inline constexpr double gelu_c = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double gelu_k = 0.044715;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(gelu_c * (u + gelu_k * u * u * u))); }

inline double gelu_grad(double u)
{
    const double t = std::tanh(gelu_c * (u + gelu_k * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * gelu_c * (1.0 + 3.0 * gelu_k * u * u);
}

/// Inverted-dropout scale matrix (entries 0 or 1/keep); empty when dropout is off.
inline RowMatrix dropout_scale(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng)
{
    if (!rng || rate <= 0.0) return {};
    const double keep = 1.0 - rate;
    RowMatrix s(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) s(i, j) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    return s;
}

template <typename M>
inline void apply_scale(M& x, const RowMatrix& scale)
{
    if (scale.size() != 0) x.array() *= scale.array();
}

} // namespace detail

struct ForwardResult {
    std::size_t batch_size = 0;
    std::size_t num_classes = 0;
    std::vector<double> logits;        ///< [B x C]
    std::vector<double> probabilities; ///< [B x C], softmax of logits
    std::vector<detail::ExampleCache> cache;

    [[nodiscard]] std::span<const double> logits_row(std::size_t b) const
    {
        return std::span(logits).subspan(b * num_classes, num_classes);
    }
    [[nodiscard]] std::span<const double> probabilities_row(std::size_t b) const
    {
        return std::span(probabilities).subspan(b * num_classes, num_classes);
    }
};

struct GradientResult {
    double loss = 0.0; ///< mean over the batch
    std::vector<double> example_losses;
    Gradients gradients;
    /// d(loss)/d(token embedding + position embedding), [B x L x H]; zero on PAD positions.
    Tensor embedding_gradient;
};

/// Pre-norm transformer encoder, masked mean pooling, tanh pooler and a linear classification head.
class Classifier {
public:
    static constexpr const char* token_embedding = "embeddings.token";
    static constexpr const char* position_embedding = "embeddings.position";

    explicit Classifier(EncoderConfig config) : config_(config) { config_.validate(); }

    [[nodiscard]] const EncoderConfig& config() const noexcept { return config_; }

    [[nodiscard]] std::map<std::string, Shape> parameter_shapes() const
    {
        const auto h = config_.hidden_dim, f = config_.ff_dim;
        std::map<std::string, Shape> shapes;
        shapes[token_embedding] = {config_.vocab_size, h};
        shapes[position_embedding] = {config_.max_positions, h};
        for (std::size_t l = 0; l < config_.num_layers; ++l) {
            const auto p = layer_prefix(l);
            for (const char* ln : {"attn_norm", "ffn_norm"}) {
                shapes[p + ln + ".gain"] = {h};
                shapes[p + ln + ".bias"] = {h};
            }
            for (const char* proj : {"query", "key", "value", "attn_out"}) {
                shapes[p + proj + ".weight"] = {h, h};
                shapes[p + proj + ".bias"] = {h};
            }
            shapes[p + "ffn_in.weight"] = {h, f};
            shapes[p + "ffn_in.bias"] = {f};
            shapes[p + "ffn_out.weight"] = {f, h};
            shapes[p + "ffn_out.bias"] = {h};
        }
        shapes["final_norm.gain"] = {h};
        shapes["final_norm.bias"] = {h};
        shapes["pooler.weight"] = {h, h};
        shapes["pooler.bias"] = {h};
        shapes["classifier.weight"] = {h, config_.num_classes};
        shapes["classifier.bias"] = {config_.num_classes};
        return shapes;
    }

    /// Fan-based uniform weights, zero biases, unit norm gains; deterministic in `config.seed`.
    [[nodiscard]] Parameters init_params() const
    {
        Parameters params;
        const auto shapes = parameter_shapes();
        for (const auto& [name, shape] : shapes) {
            Tensor t = Tensor::zeros(shape);
            const bool is_gain = name.ends_with(".gain");
            const bool is_bias = name.ends_with(".bias");
            if (is_gain) {
                std::fill(t.values.begin(), t.values.end(), 1.0);
            } else if (!is_bias) {
                Rng rng(derive_seed(config_.seed, {streams::init, hash_name(name)}));
                const bool embedding = name.starts_with("embeddings.");
                const double limit = embedding ? std::sqrt(3.0 / static_cast<double>(shape[1]))
                                               : std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
                for (double& v : t.values) v = rng.uniform(-limit, limit);
            }
            params.emplace(name, std::move(t));
        }
        return params;
    }

    /// Every expected name present with the expected shape and finite values.
    void check_parameters(const Parameters& params) const
    {
        const auto shapes = parameter_shapes();
        if (params.size() != shapes.size())
            throw Error("parameter set has " + std::to_string(params.size()) + " tensors, model expects " +
                        std::to_string(shapes.size()));
        for (const auto& [name, shape] : shapes) {
            const Tensor& t = tensor_at(params, name);
            if (t.shape != shape)
                throw Error("tensor '" + name + "' has shape " + shape_string(t.shape) + ", expected " +
                            shape_string(shape));
            if (!all_finite(t)) throw Error("tensor '" + name + "' holds non-finite values");
        }
    }

    [[nodiscard]] ForwardResult forward(const Parameters& params, const TokenizedBatch& batch, bool train_mode,
                                        std::uint64_t dropout_seed = 0) const
    {
        validate_batch(batch);
        const Weights w(params, config_);
        const auto c = config_.num_classes;
        ForwardResult result;
        result.batch_size = batch.batch_size;
        result.num_classes = c;
        result.logits.resize(batch.batch_size * c);
        result.probabilities.resize(batch.batch_size * c);
        result.cache.resize(batch.batch_size);
        for (std::size_t b = 0; b < batch.batch_size; ++b) {
            std::optional<Rng> rng;
            if (train_mode && config_.dropout_rate > 0.0) rng.emplace(derive_seed(dropout_seed, {b}));
            const auto logits = forward_example(w, batch, b, rng ? &*rng : nullptr, result.cache[b]);
            std::copy(logits.begin(), logits.end(), result.logits.begin() + static_cast<std::ptrdiff_t>(b * c));
            const auto p = softmax(logits);
            std::copy(p.begin(), p.end(), result.probabilities.begin() + static_cast<std::ptrdiff_t>(b * c));
        }
        return result;
    }

    /// Mean loss over the batch and its gradients with respect to every parameter and the input embeddings.
    [[nodiscard]] GradientResult backward(const Parameters& params, const TokenizedBatch& batch,
                                          const LossConfig& loss, bool train_mode = true,
                                          std::uint64_t dropout_seed = 0) const
    {
        if (!batch.labels) throw Error("backward requires a labeled batch");
        auto fwd = forward(params, batch, train_mode, dropout_seed);
        const auto c = config_.num_classes;
        const auto inv_b = 1.0 / static_cast<double>(std::max<std::size_t>(batch.batch_size, 1));
        GradientResult out;
        out.gradients = zeros_like(params);
        out.embedding_gradient = Tensor::zeros({batch.batch_size, batch.length, config_.hidden_dim});
        const Weights w(params, config_);
        GradWeights g(out.gradients, config_);
        for (std::size_t b = 0; b < batch.batch_size; ++b) {
            const int label = (*batch.labels)[b];
            if (label < 0 || static_cast<std::size_t>(label) >= c)
                throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(c) + " classes");
            const auto q = one_hot(label, c);
            const double l = loss_value(loss, fwd.probabilities_row(b), q);
            out.example_losses.push_back(l);
            out.loss += l * inv_b;
            auto dlogits = loss_grad_logits(loss, fwd.logits_row(b), q);
            for (double& v : dlogits) v *= inv_b;
            backward_example(w, g, fwd.cache[b], dlogits, out.embedding_gradient, b, batch.length);
        }
        return out;
    }

    [[nodiscard]] std::vector<ClassPrediction> predict(const Parameters& params, const TokenizedBatch& batch) const
    {
        const auto fwd = forward(params, batch, false);
        std::vector<ClassPrediction> out;
        for (std::size_t b = 0; b < batch.batch_size; ++b) {
            const auto p = fwd.probabilities_row(b);
            out.push_back({argmax(p), std::vector<double>(p.begin(), p.end())});
        }
        return out;
    }

private:
    static std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

    struct LayerWeights {
        const Tensor *attn_gain, *attn_bias, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        const Tensor *ffn_gain, *ffn_bias, *w_in, *b_in, *w_out, *b_out;
    };

    struct Weights {
        const Tensor *tok, *pos, *final_gain, *final_bias, *pool_w, *pool_b, *cls_w, *cls_b;
        std::vector<LayerWeights> layers;

        Weights(const Parameters& p, const EncoderConfig& cfg)
            : tok(&tensor_at(p, token_embedding)), pos(&tensor_at(p, position_embedding)),
              final_gain(&tensor_at(p, "final_norm.gain")), final_bias(&tensor_at(p, "final_norm.bias")),
              pool_w(&tensor_at(p, "pooler.weight")), pool_b(&tensor_at(p, "pooler.bias")),
              cls_w(&tensor_at(p, "classifier.weight")), cls_b(&tensor_at(p, "classifier.bias"))
        {
            for (std::size_t l = 0; l < cfg.num_layers; ++l) {
                const auto x = layer_prefix(l);
                auto at = [&](const std::string& n) { return &tensor_at(p, x + n); };
                layers.push_back({at("attn_norm.gain"), at("attn_norm.bias"), at("query.weight"), at("query.bias"),
                                  at("key.weight"), at("key.bias"), at("value.weight"), at("value.bias"),
                                  at("attn_out.weight"), at("attn_out.bias"), at("ffn_norm.gain"),
                                  at("ffn_norm.bias"), at("ffn_in.weight"), at("ffn_in.bias"), at("ffn_out.weight"),
                                  at("ffn_out.bias")});
            }
        }
    };

    struct GradLayer {
        Tensor *attn_gain, *attn_bias, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        Tensor *ffn_gain, *ffn_bias, *w_in, *b_in, *w_out, *b_out;
    };

    struct GradWeights {
        Tensor *tok, *pos, *final_gain, *final_bias, *pool_w, *pool_b, *cls_w, *cls_b;
        std::vector<GradLayer> layers;

        GradWeights(Gradients& g, const EncoderConfig& cfg)
            : tok(&tensor_at(g, token_embedding)), pos(&tensor_at(g, position_embedding)),
              final_gain(&tensor_at(g, "final_norm.gain")), final_bias(&tensor_at(g, "final_norm.bias")),
              pool_w(&tensor_at(g, "pooler.weight")), pool_b(&tensor_at(g, "pooler.bias")),
              cls_w(&tensor_at(g, "classifier.weight")), cls_b(&tensor_at(g, "classifier.bias"))
        {
            for (std::size_t l = 0; l < cfg.num_layers; ++l) {
                const auto x = layer_prefix(l);
                auto at = [&](const std::string& n) { return &tensor_at(g, x + n); };
                layers.push_back({at("attn_norm.gain"), at("attn_norm.bias"), at("query.weight"), at("query.bias"),
                                  at("key.weight"), at("key.bias"), at("value.weight"), at("value.bias"),
                                  at("attn_out.weight"), at("attn_out.bias"), at("ffn_norm.gain"),
                                  at("ffn_norm.bias"), at("ffn_in.weight"), at("ffn_in.bias"), at("ffn_out.weight"),
                                  at("ffn_out.bias")});
            }
        }
    };

    void validate_batch(const TokenizedBatch& batch) const
    {
        if (batch.token_ids.size() != batch.batch_size * batch.length || batch.mask.size() != batch.token_ids.size())
            throw Error("malformed batch: id/mask sizes disagree with B x L");
        if (batch.length > config_.max_positions)
            throw Error("sequence length " + std::to_string(batch.length) + " exceeds max_positions " +
                        std::to_string(config_.max_positions));
        for (std::size_t i = 0; i < batch.token_ids.size(); ++i) {
            const int id = batch.token_ids[i];
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
                throw Error("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(config_.vocab_size));
        }
    }

    std::vector<double> forward_example(const Weights& w, const TokenizedBatch& batch, std::size_t b, Rng* rng,
                                        detail::ExampleCache& ex) const
    {
        using namespace detail;
        const auto h = static_cast<Eigen::Index>(config_.hidden_dim);
        const auto heads = config_.num_heads;
        const auto dh = static_cast<Eigen::Index>(config_.head_dim());
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const double rate = config_.dropout_rate;

        for (std::size_t t = 0; t < batch.length; ++t)
            if (batch.active(b, t)) {
                ex.ids.push_back(batch.token(b, t));
                ex.positions.push_back(static_cast<int>(t));
            }
        const auto n = static_cast<Eigen::Index>(ex.ids.size());
        const auto tok = as_matrix(*w.tok);
        const auto pos = as_matrix(*w.pos);

        RowMatrix x(n, h);
        for (Eigen::Index i = 0; i < n; ++i) x.row(i) = tok.row(ex.ids[i]) + pos.row(ex.positions[i]);
        ex.emb_drop = dropout_scale(n, h, rate, rng);
        apply_scale(x, ex.emb_drop);

        ex.layers.resize(config_.num_layers);
        for (std::size_t l = 0; l < config_.num_layers; ++l) {
            const auto& lw = w.layers[l];
            auto& lc = ex.layers[l];
            lc.input = x;
            lc.attn_in = layer_norm(x, *lw.attn_gain, *lw.attn_bias, lc.attn_norm);
            lc.query = dense(lc.attn_in, *lw.wq, *lw.bq);
            lc.key = dense(lc.attn_in, *lw.wk, *lw.bk);
            lc.value = dense(lc.attn_in, *lw.wv, *lw.bv);
            lc.context.resize(n, h);
            lc.attention.resize(heads);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                const auto off = static_cast<Eigen::Index>(hd) * dh;
                RowMatrix s = (lc.query.middleCols(off, dh) * lc.key.middleCols(off, dh).transpose()) * scale;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double m = s.row(i).maxCoeff();
                    s.row(i) = (s.row(i).array() - m).exp();
                    s.row(i) /= s.row(i).sum();
                }
                lc.context.middleCols(off, dh).noalias() = s * lc.value.middleCols(off, dh);
                lc.attention[hd] = std::move(s);
            }
            RowMatrix attn_out = dense(lc.context, *lw.wo, *lw.bo);
            lc.attn_drop = dropout_scale(n, h, rate, rng);
            apply_scale(attn_out, lc.attn_drop);
            lc.mid = lc.input + attn_out;

            lc.ffn_in = layer_norm(lc.mid, *lw.ffn_gain, *lw.ffn_bias, lc.ffn_norm);
            lc.pre_act = dense(lc.ffn_in, *lw.w_in, *lw.b_in);
            lc.act = lc.pre_act.unaryExpr([](double u) { return gelu(u); });
            RowMatrix ffn_out = dense(lc.act, *lw.w_out, *lw.b_out);
            lc.ffn_drop = dropout_scale(n, h, rate, rng);
            apply_scale(ffn_out, lc.ffn_drop);
            x = lc.mid + ffn_out;
        }

        ex.final_out = layer_norm(x, *w.final_gain, *w.final_bias, ex.final_norm);
        ex.pooled = n > 0 ? RowVector(ex.final_out.colwise().mean()) : RowVector::Zero(h);
        ex.pooler_out = (ex.pooled * as_matrix(*w.pool_w) + as_matrix(*w.pool_b).row(0)).array().tanh().matrix();
        ex.head_in = ex.pooler_out;
        ex.pool_drop = dropout_scale(1, h, rate, rng);
        if (ex.pool_drop.size() != 0) ex.head_in.array() *= ex.pool_drop.row(0).array();
        const RowVector logits = ex.head_in * as_matrix(*w.cls_w) + as_matrix(*w.cls_b).row(0);
        return {logits.data(), logits.data() + logits.size()};
    }

    void backward_example(const Weights& w, GradWeights& g, const detail::ExampleCache& ex,
                          std::span<const double> dlogits_in, Tensor& emb_grad, std::size_t b,
                          std::size_t length) const
    {
        using namespace detail;
        const auto h = static_cast<Eigen::Index>(config_.hidden_dim);
        const auto dh = static_cast<Eigen::Index>(config_.head_dim());
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const auto n = static_cast<Eigen::Index>(ex.ids.size());

        const RowVector dlogits = Eigen::Map<const RowVector>(dlogits_in.data(), static_cast<Eigen::Index>(dlogits_in.size()));
        as_matrix(*g.cls_w).noalias() += ex.head_in.transpose() * dlogits;
        as_matrix(*g.cls_b).row(0) += dlogits;
        RowVector dhead = dlogits * as_matrix(*w.cls_w).transpose();
        if (ex.pool_drop.size() != 0) dhead.array() *= ex.pool_drop.row(0).array();
        const RowVector dpre = dhead.array() * (1.0 - ex.pooler_out.array().square());
        as_matrix(*g.pool_w).noalias() += ex.pooled.transpose() * dpre;
        as_matrix(*g.pool_b).row(0) += dpre;
        if (n == 0) return;
        const RowVector dpooled = dpre * as_matrix(*w.pool_w).transpose();

        RowMatrix dfinal = dpooled.replicate(n, 1) / static_cast<double>(n);
        RowMatrix dx = layer_norm_backward(dfinal, *w.final_gain, ex.final_norm, *g.final_gain, *g.final_bias);

        for (std::size_t li = config_.num_layers; li-- > 0;) {
            const auto& lw = w.layers[li];
            auto& lg = g.layers[li];
            const auto& lc = ex.layers[li];

            // x_out = mid + drop(ffn(norm(mid)))
            RowMatrix dffn = dx;
            apply_scale(dffn, lc.ffn_drop);
            RowMatrix dact = dense_backward(lc.act, dffn, *lw.w_out, *lg.w_out, *lg.b_out);
            dact.array() *= lc.pre_act.unaryExpr([](double u) { return gelu_grad(u); }).array();
            RowMatrix dffn_in = dense_backward(lc.ffn_in, dact, *lw.w_in, *lg.w_in, *lg.b_in);
            RowMatrix dmid = dx + layer_norm_backward(dffn_in, *lw.ffn_gain, lc.ffn_norm, *lg.ffn_gain, *lg.ffn_bias);

            // mid = input + drop(attn_out(context))
            RowMatrix dattn = dmid;
            apply_scale(dattn, lc.attn_drop);
            const RowMatrix dcontext = dense_backward(lc.context, dattn, *lw.wo, *lg.wo, *lg.bo);
            RowMatrix dq(n, h), dk(n, h), dv(n, h);
            for (std::size_t hd = 0; hd < config_.num_heads; ++hd) {
                const auto off = static_cast<Eigen::Index>(hd) * dh;
                const RowMatrix& p = lc.attention[hd];
                const auto dctx = dcontext.middleCols(off, dh);
                dv.middleCols(off, dh).noalias() = p.transpose() * dctx;
                RowMatrix dp = dctx * lc.value.middleCols(off, dh).transpose();
                const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
                RowMatrix ds = p.array() * (dp.colwise() - row_dot).array();
                ds *= scale;
                dq.middleCols(off, dh).noalias() = ds * lc.key.middleCols(off, dh);
                dk.middleCols(off, dh).noalias() = ds.transpose() * lc.query.middleCols(off, dh);
            }
            RowMatrix dattn_in = dense_backward(lc.attn_in, dq, *lw.wq, *lg.wq, *lg.bq);
            dattn_in += dense_backward(lc.attn_in, dk, *lw.wk, *lg.wk, *lg.bk);
            dattn_in += dense_backward(lc.attn_in, dv, *lw.wv, *lg.wv, *lg.bv);
            dx = dmid + layer_norm_backward(dattn_in, *lw.attn_gain, lc.attn_norm, *lg.attn_gain, *lg.attn_bias);
        }

        apply_scale(dx, ex.emb_drop);
        auto dtok = as_matrix(*g.tok);
        auto dpos = as_matrix(*g.pos);
        for (Eigen::Index i = 0; i < n; ++i) {
            dtok.row(ex.ids[i]) += dx.row(i);
            dpos.row(ex.positions[i]) += dx.row(i);
            const auto base = (b * length + static_cast<std::size_t>(ex.positions[i])) * config_.hidden_dim;
            std::copy(dx.row(i).data(), dx.row(i).data() + h, emb_grad.values.begin() + static_cast<std::ptrdiff_t>(base));
        }
    }

    EncoderConfig config_;
};

inline Parameters init_params(const EncoderConfig& config) { return Classifier(config).init_params(); }

} // namespace rft
