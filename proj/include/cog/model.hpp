#pragma once

#include "cog/attention.hpp"
#include "cog/errors.hpp"
#include "cog/matrix.hpp"
#include "cog/rng.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cog {

enum class ActivationPolicy { AllSoftmax, AllCog, CogExceptFirst, CogExceptFirstAndLast };
enum class Precision { Single, Double };

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int vocab_size = 256;
    int context_len = 256;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;
    ActivationPolicy activation_policy = ActivationPolicy::CogExceptFirstAndLast;
    bool qk_scale_enabled = true;
    Precision precision = Precision::Single;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_layers < 1) throw config_error("model config: n_layers must be >= 1");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw config_error("model config: d_model must be divisible by n_heads");
        if ((d_model / n_heads) % 2 != 0)
            throw config_error("model config: head dimension must be even for rotary embedding");
        if (d_ff < 1) throw config_error("model config: d_ff must be >= 1");
        if (vocab_size < 2) throw config_error("model config: vocab_size must be >= 2");
        if (context_len < 2) throw config_error("model config: context_len must be >= 2");
        if (!(rope_base > 0)) throw config_error("model config: rope_base must be > 0");
        if (norm_eps < 0) throw config_error("model config: norm_eps must be >= 0");
    }
};

/// Per-layer activation under the configured policy.
inline AttnActivation layer_activation(int layer_idx, const ModelConfig& config) {
    if (layer_idx < 0 || layer_idx >= config.n_layers)
        throw std::out_of_range("layer_activation: layer index " + std::to_string(layer_idx) +
                                " out of range for " + std::to_string(config.n_layers) + " layers");
    switch (config.activation_policy) {
    case ActivationPolicy::AllSoftmax: return AttnActivation::Softmax;
    case ActivationPolicy::AllCog: return AttnActivation::Cog;
    case ActivationPolicy::CogExceptFirst:
        return layer_idx == 0 ? AttnActivation::Softmax : AttnActivation::Cog;
    case ActivationPolicy::CogExceptFirstAndLast:
        return (layer_idx == 0 || layer_idx == config.n_layers - 1) ? AttnActivation::Softmax
                                                                    : AttnActivation::Cog;
    }
    throw std::out_of_range("layer_activation: unknown policy");
}

/// x * gain / sqrt(mean(x^2) + eps), applied per row.
template <typename Scalar>
Matrix<Scalar> rms_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, double eps) {
    check_shape(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm gain shape");
    ColVec<Scalar> r = (x.array().square().rowwise().mean() + static_cast<Scalar>(eps))
                           .rsqrt()
                           .matrix();
    return ((x.array().colwise() * r.array()).rowwise() * gain.row(0).array()).matrix();
}

namespace detail {

/// Backward of rms_norm. Accumulates the gain gradient, returns grad x.
template <typename Scalar>
Matrix<Scalar> rms_norm_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, double eps,
                                 const Matrix<Scalar>& grad_y, Matrix<Scalar>& grad_gain) {
    const auto d = static_cast<Scalar>(x.cols());
    ColVec<Scalar> r = (x.array().square().rowwise().mean() + static_cast<Scalar>(eps))
                           .rsqrt()
                           .matrix();
    grad_gain.row(0).array() +=
        ((grad_y.array() * x.array()).colwise() * r.array()).colwise().sum();
    // dx = g.dy.r - x * r^3/d * sum_j(dy_j g_j x_j)
    ColVec<Scalar> rowdot =
        ((grad_y.array().rowwise() * gain.row(0).array()) * x.array()).rowwise().sum().matrix();
    ColVec<Scalar> coef = (r.array().cube() * rowdot.array() / d).matrix();
    return ((grad_y.array().rowwise() * gain.row(0).array()).colwise() * r.array() -
            x.array().colwise() * coef.array())
        .matrix();
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& x) {
    // 0.5*(1+tanh(x/2)): saturates cleanly at both ends.
    return (Scalar(0.5) * ((x.array() * Scalar(0.5)).tanh() + Scalar(1))).matrix();
}

} // namespace detail

/// SwiGLU feed-forward: w_down . (silu(x w_gate) .* (x w_up)).
template <typename Scalar>
Matrix<Scalar> swiglu_ffn(const Matrix<Scalar>& x, const Matrix<Scalar>& w_gate,
                          const Matrix<Scalar>& w_up, const Matrix<Scalar>& w_down) {
    Matrix<Scalar> g = matmul(x, w_gate);
    Matrix<Scalar> u = matmul(x, w_up);
    Matrix<Scalar> h = ((g.array() * detail::sigmoid(g).array()) * u.array()).matrix();
    return matmul(h, w_down);
}

template <typename Scalar>
struct LayerParams {
    Matrix<Scalar> attn_norm_gain; // 1 x d_model
    AttentionParams<Scalar> attn;
    Matrix<Scalar> ffn_norm_gain; // 1 x d_model
    Matrix<Scalar> w_gate, w_up, w_down;
};

/// Decoder-only transformer with a per-layer attention activation policy.
template <typename Scalar>
struct Cogformer {
    ModelConfig config;
    bool tied_unembedding = false;
    Matrix<Scalar> token_embedding; // vocab x d_model
    std::vector<LayerParams<Scalar>> layers;
    Matrix<Scalar> final_norm_gain; // 1 x d_model
    Matrix<Scalar> unembedding;     // d_model x vocab (empty when tied)
};

template <typename Scalar>
struct ParamRef {
    std::string name;
    Matrix<Scalar>* tensor;
};

/// Parameters in fixed enumeration order; this order is the checkpoint
/// tensor-directory order.
template <typename Scalar>
std::vector<ParamRef<Scalar>> param_refs(Cogformer<Scalar>& m) {
    std::vector<ParamRef<Scalar>> refs;
    refs.push_back({"token_embedding", &m.token_embedding});
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto& lay = m.layers[l];
        refs.push_back({p + "attn_norm_gain", &lay.attn_norm_gain});
        refs.push_back({p + "w_q", &lay.attn.w_q});
        refs.push_back({p + "w_k", &lay.attn.w_k});
        refs.push_back({p + "w_v", &lay.attn.w_v});
        refs.push_back({p + "w_o", &lay.attn.w_o});
        refs.push_back({p + "ffn_norm_gain", &lay.ffn_norm_gain});
        refs.push_back({p + "w_gate", &lay.w_gate});
        refs.push_back({p + "w_up", &lay.w_up});
        refs.push_back({p + "w_down", &lay.w_down});
    }
    refs.push_back({"final_norm_gain", &m.final_norm_gain});
    if (!m.tied_unembedding) refs.push_back({"unembedding", &m.unembedding});
    return refs;
}

template <typename Scalar>
struct ConstParamRef {
    std::string name;
    const Matrix<Scalar>* tensor;
};

/// Read-only view over the same tensors in the same order.
template <typename Scalar>
std::vector<ConstParamRef<Scalar>> param_refs(const Cogformer<Scalar>& m) {
    auto mut = param_refs(const_cast<Cogformer<Scalar>&>(m));
    std::vector<ConstParamRef<Scalar>> out;
    out.reserve(mut.size());
    for (auto& r : mut) out.push_back({std::move(r.name), r.tensor});
    return out;
}

template <typename Scalar>
std::size_t param_count(const Cogformer<Scalar>& m) {
    std::size_t n = 0;
    for (const auto& r : param_refs(m)) n += static_cast<std::size_t>(r.tensor->size());
    return n;
}

/// All-zero parameter set with the shapes the config implies. Used for
/// gradient accumulators and as the skeleton checkpoints load into.
template <typename Scalar>
Cogformer<Scalar> make_zero_model(const ModelConfig& config, bool tied_unembedding = false) {
    config.validate();
    Cogformer<Scalar> m;
    m.config = config;
    m.tied_unembedding = tied_unembedding;
    const Index d = config.d_model;
    const Index ff = config.d_ff;
    const Index v = config.vocab_size;
    m.token_embedding = Matrix<Scalar>::Zero(v, d);
    m.final_norm_gain = Matrix<Scalar>::Zero(1, d);
    if (!tied_unembedding) m.unembedding = Matrix<Scalar>::Zero(d, v);
    m.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& lay : m.layers) {
        lay.attn_norm_gain = Matrix<Scalar>::Zero(1, d);
        lay.ffn_norm_gain = Matrix<Scalar>::Zero(1, d);
        lay.attn.n_heads = config.n_heads;
        lay.attn.w_q = Matrix<Scalar>::Zero(d, d);
        lay.attn.w_k = Matrix<Scalar>::Zero(d, d);
        lay.attn.w_v = Matrix<Scalar>::Zero(d, d);
        lay.attn.w_o = Matrix<Scalar>::Zero(d, d);
        lay.w_gate = Matrix<Scalar>::Zero(d, ff);
        lay.w_up = Matrix<Scalar>::Zero(d, ff);
        lay.w_down = Matrix<Scalar>::Zero(ff, d);
    }
    return m;
}

template <typename Scalar>
Cogformer<Scalar> zeros_like(const Cogformer<Scalar>& m) {
    return make_zero_model<Scalar>(m.config, m.tied_unembedding);
}

/// Normal init, std 0.02, with residual-writing projections (w_o, w_down)
/// scaled by 1/sqrt(2 n_layers); norm gains start at 1. Every tensor draws
/// from its own named substream, so init is order-independent.
template <typename Scalar>
Cogformer<Scalar> init_params(const ModelConfig& config, bool tied_unembedding = false) {
    Cogformer<Scalar> m = make_zero_model<Scalar>(config, tied_unembedding);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);
    for (auto& ref : param_refs(m)) {
        if (ref.name.ends_with("norm_gain")) {
            ref.tensor->setOnes();
            continue;
        }
        const bool resid = ref.name.ends_with("w_o") || ref.name.ends_with("w_down");
        Rng rng{config.seed, stream_of(ref.name)};
        *ref.tensor = randn<Scalar>(rng, ref.tensor->rows(), ref.tensor->cols(),
                                    resid ? resid_std : base_std);
    }
    return m;
}

namespace detail {

template <typename Scalar>
struct LayerTrace {
    Matrix<Scalar> x_in;    // residual stream entering the layer
    Matrix<Scalar> h_norm1; // rms_norm(x_in)
    MultiheadTrace<Scalar> mh;
    Matrix<Scalar> x_mid;   // x_in + attention output
    Matrix<Scalar> h_norm2; // rms_norm(x_mid)
    Matrix<Scalar> gate_pre, up, hidden; // SwiGLU intermediates
};

template <typename Scalar>
struct ModelTrace {
    std::vector<LayerTrace<Scalar>> layers;
    Matrix<Scalar> final_prenorm; // residual stream after the last layer
    Matrix<Scalar> final_hidden;  // after the final norm
};

template <typename Scalar>
void check_tokens(const Cogformer<Scalar>& m, std::span<const int> tokens) {
    if (tokens.empty()) throw config_error("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > m.config.context_len)
        throw config_error("forward: sequence length " + std::to_string(tokens.size()) +
                           " exceeds context_len " + std::to_string(m.config.context_len));
    for (int t : tokens)
        if (t < 0 || t >= m.config.vocab_size)
            throw config_error("forward: token id " + std::to_string(t) + " out of vocabulary");
}

template <typename Scalar>
const Matrix<Scalar>& unembed_matrix(const Cogformer<Scalar>& m, Matrix<Scalar>& scratch) {
    if (!m.tied_unembedding) return m.unembedding;
    scratch = m.token_embedding.transpose();
    return scratch;
}

template <typename Scalar>
Matrix<Scalar> forward_impl(const Cogformer<Scalar>& m, std::span<const int> tokens,
                            ModelTrace<Scalar>* trace) {
    check_tokens(m, tokens);
    const Index n = static_cast<Index>(tokens.size());
    const Index d = m.config.d_model;
    const double eps = m.config.norm_eps;

    Matrix<Scalar> x(n, d);
    for (Index i = 0; i < n; ++i)
        x.row(i) = m.token_embedding.row(tokens[static_cast<std::size_t>(i)]);

    if (trace) trace->layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& lay = m.layers[l];
        const AttnActivation act = layer_activation(static_cast<int>(l), m.config);
        LayerTrace<Scalar>* lt = trace ? &trace->layers[l] : nullptr;

        Matrix<Scalar> h1 = rms_norm(x, lay.attn_norm_gain, eps);
        Matrix<Scalar> attn_out = multihead_forward(h1, lay.attn, act, m.config.rope_base,
                                                    m.config.qk_scale_enabled,
                                                    lt ? &lt->mh : nullptr);
        Matrix<Scalar> x_mid = x + attn_out;

        Matrix<Scalar> h2 = rms_norm(x_mid, lay.ffn_norm_gain, eps);
        Matrix<Scalar> g = matmul(h2, lay.w_gate);
        Matrix<Scalar> u = matmul(h2, lay.w_up);
        Matrix<Scalar> hidden = ((g.array() * sigmoid(g).array()) * u.array()).matrix();
        Matrix<Scalar> ffn_out = matmul(hidden, lay.w_down);

        if (lt) {
            lt->x_in = std::move(x);
            lt->h_norm1 = std::move(h1);
            lt->x_mid = x_mid;
            lt->h_norm2 = std::move(h2);
            lt->gate_pre = std::move(g);
            lt->up = std::move(u);
            lt->hidden = std::move(hidden);
        }
        x = std::move(x_mid);
        x += ffn_out;
    }

    Matrix<Scalar> h_fin = rms_norm(x, m.final_norm_gain, eps);
    Matrix<Scalar> scratch;
    Matrix<Scalar> logits = matmul(h_fin, unembed_matrix(m, scratch));
    if (trace) {
        trace->final_prenorm = std::move(x);
        trace->final_hidden = std::move(h_fin);
    }
    return logits;
}

} // namespace detail

struct ForwardOptions {
    bool capture_hidden = false;    // per-layer residual-stream outputs
    bool capture_attention = false; // per-layer, per-head attention weights
};

template <typename Scalar>
struct ForwardResult {
    Matrix<Scalar> logits;        // n x vocab
    Matrix<Scalar> final_prenorm; // n x d_model, before the final norm
    Matrix<Scalar> final_hidden;  // n x d_model, after the final norm
    std::vector<Matrix<Scalar>> layer_hidden;
    std::vector<std::vector<AttentionRows<Scalar>>> attention; // [layer][head]
};

template <typename Scalar>
ForwardResult<Scalar> forward(const Cogformer<Scalar>& m, std::span<const int> tokens,
                              const ForwardOptions& opts = {}) {
    detail::ModelTrace<Scalar> trace;
    ForwardResult<Scalar> res;
    res.logits = detail::forward_impl(m, tokens, &trace);
    res.final_prenorm = std::move(trace.final_prenorm);
    res.final_hidden = std::move(trace.final_hidden);
    if (opts.capture_hidden) {
        res.layer_hidden.reserve(trace.layers.size());
        for (std::size_t l = 1; l < trace.layers.size(); ++l)
            res.layer_hidden.push_back(trace.layers[l].x_in);
        res.layer_hidden.push_back(res.final_prenorm);
    }
    if (opts.capture_attention) {
        res.attention.reserve(trace.layers.size());
        for (auto& lt : trace.layers) res.attention.push_back(std::move(lt.mh.heads));
    }
    return res;
}

/// Mean next-token negative log-likelihood in nats. The shift is internal:
/// position t predicts tokens[t + 1], so n tokens yield n - 1 terms.
template <typename Scalar>
double cross_entropy(const Matrix<Scalar>& logits, std::span<const int> tokens) {
    const Index n = logits.rows();
    check_shape(static_cast<Index>(tokens.size()) == n, "cross_entropy logits vs tokens");
    if (n < 2) throw config_error("cross_entropy: need at least 2 tokens for next-token loss");
    double total = 0;
    for (Index t = 0; t + 1 < n; ++t) {
        const int target = tokens[static_cast<std::size_t>(t) + 1];
        if (target < 0 || target >= logits.cols())
            throw config_error("cross_entropy: target token out of vocabulary");
        const double m = static_cast<double>(logits.row(t).maxCoeff());
        double sum = 0;
        for (Index j = 0; j < logits.cols(); ++j)
            sum += std::exp(static_cast<double>(logits(t, j)) - m);
        total += m + std::log(sum) - static_cast<double>(logits(t, target));
    }
    return total / static_cast<double>(n - 1);
}

/// Forward + cross-entropy + full backward. Accumulates parameter gradients
/// into `grads` (shapes from zeros_like) and returns the sequence loss.
template <typename Scalar>
double loss_and_grads(const Cogformer<Scalar>& m, std::span<const int> tokens,
                      Cogformer<Scalar>& grads) {
    detail::ModelTrace<Scalar> trace;
    Matrix<Scalar> logits = detail::forward_impl(m, tokens, &trace);
    const double loss = cross_entropy(logits, tokens);

    const Index n = logits.rows();
    const double eps = m.config.norm_eps;
    const Scalar inv_terms = Scalar(1) / static_cast<Scalar>(n - 1);

    // d loss / d logits: (softmax - onehot) / (n - 1) on predicting rows.
    Matrix<Scalar> dlogits = Matrix<Scalar>::Zero(n, logits.cols());
    for (Index t = 0; t + 1 < n; ++t) {
        const Scalar mx = logits.row(t).maxCoeff();
        RowVec<Scalar> e = (logits.row(t).array() - mx).exp().matrix();
        dlogits.row(t) = e / e.sum() * inv_terms;
        dlogits(t, tokens[static_cast<std::size_t>(t) + 1]) -= inv_terms;
    }

    Matrix<Scalar> dh_fin(n, m.config.d_model);
    if (m.tied_unembedding) {
        dh_fin.noalias() = dlogits * m.token_embedding;
        grads.token_embedding.noalias() += dlogits.transpose() * trace.final_hidden;
    } else {
        dh_fin.noalias() = dlogits * m.unembedding.transpose();
        grads.unembedding.noalias() += trace.final_hidden.transpose() * dlogits;
    }
    Matrix<Scalar> dx = detail::rms_norm_backward(trace.final_prenorm, m.final_norm_gain, eps,
                                                  dh_fin, grads.final_norm_gain);

    for (std::size_t li = m.layers.size(); li-- > 0;) {
        const auto& lay = m.layers[li];
        auto& glay = grads.layers[li];
        const auto& lt = trace.layers[li];
        const AttnActivation act = layer_activation(static_cast<int>(li), m.config);

        // FFN branch: x_out = x_mid + hidden * w_down
        glay.w_down.noalias() += lt.hidden.transpose() * dx;
        Matrix<Scalar> dhidden = dx * lay.w_down.transpose();
        Matrix<Scalar> sig = detail::sigmoid(lt.gate_pre);
        Matrix<Scalar> silu = (lt.gate_pre.array() * sig.array()).matrix();
        Matrix<Scalar> dsilu = (dhidden.array() * lt.up.array()).matrix();
        Matrix<Scalar> du = (dhidden.array() * silu.array()).matrix();
        Matrix<Scalar> dgate =
            (dsilu.array() * (sig.array() + lt.gate_pre.array() * sig.array() *
                                                (Scalar(1) - sig.array())))
                .matrix();
        glay.w_gate.noalias() += lt.h_norm2.transpose() * dgate;
        glay.w_up.noalias() += lt.h_norm2.transpose() * du;
        Matrix<Scalar> dh2(n, m.config.d_model);
        dh2.noalias() = dgate * lay.w_gate.transpose();
        dh2.noalias() += du * lay.w_up.transpose();
        Matrix<Scalar> dx_mid =
            dx + detail::rms_norm_backward(lt.x_mid, lay.ffn_norm_gain, eps, dh2,
                                           glay.ffn_norm_gain);

        // Attention branch: x_mid = x_in + multihead(h_norm1)
        Matrix<Scalar> dh1 =
            multihead_backward(dx_mid, lt.h_norm1, lay.attn, lt.mh, act, m.config.rope_base,
                               m.config.qk_scale_enabled, glay.attn);
        dx = dx_mid + detail::rms_norm_backward(lt.x_in, lay.attn_norm_gain, eps, dh1,
                                                glay.attn_norm_gain);
    }

    for (Index i = 0; i < n; ++i)
        grads.token_embedding.row(tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    return loss;
}

} // namespace cog
