#pragma once

#include "cog/matrix.hpp"
#include "cog/rope.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

namespace cog {

enum class AttnActivation { Softmax, Cog };

/// Per-row signed attention weights. Softmax rows sum to 1 with entries in
/// [0,1]; Cog rows satisfy sum_j |a_ij| = 1 with entries in [-1,1]. Masked
/// entries are exactly 0. Rows whose unmasked scores are all exactly zero are
/// degenerate: emitted as all-zero rows (never NaN) and counted.
template <typename Scalar>
struct AttentionRows {
    Matrix<Scalar> weights;
    AttnActivation activation = AttnActivation::Softmax;
    int degenerate_rows = 0;
};

/// Scaled query-key scores p = scale * q k^T.
template <typename Scalar>
Matrix<Scalar> qk_scores(const Matrix<Scalar>& q, const Matrix<Scalar>& k, Scalar scale) {
    check_shape(q.cols() == k.cols(), "qk_scores head dimensions");
    if (!(scale > 0)) throw std::invalid_argument("qk_scores: scale must be > 0");
    Matrix<Scalar> p(q.rows(), k.rows());
    p.noalias() = q * k.transpose();
    p *= scale;
    return p;
}

/// Row softmax with max-subtraction; masked (-inf) entries become exactly 0.
template <typename Scalar>
AttentionRows<Scalar> softmax_rows(const Matrix<Scalar>& p_masked) {
    const Scalar ninf = masked_sentinel<Scalar>();
    const Index n = p_masked.rows();
    AttentionRows<Scalar> out;
    out.activation = AttnActivation::Softmax;

    ColVec<Scalar> shift = p_masked.rowwise().maxCoeff();
    std::vector<Index> degenerate;
    for (Index i = 0; i < n; ++i)
        if (shift[i] == ninf) {
            degenerate.push_back(i);
            shift[i] = 0; // keep exp() finite; row is zeroed below
        }
    Matrix<Scalar> e = (p_masked.array().colwise() - shift.array()).exp().matrix();
    ColVec<Scalar> denom = e.rowwise().sum();
    for (Index i : degenerate) denom[i] = 1;
    out.weights = (e.array().colwise() / denom.array()).matrix();
    for (Index i : degenerate) out.weights.row(i).setZero();
    out.degenerate_rows = static_cast<int>(degenerate.size());
    return out;
}

/// Signed-exponential rows, direct transliteration of the defining formula:
/// per row, s = sign(p), m = max over unmasked |p|, e_j = s_j exp(s_j p_j - m),
/// a_j = e_j / sum_k |e_k|. Zero scores contribute nothing to numerator or
/// denominator; an all-zero row yields an all-zero weight row.
template <typename Scalar>
AttentionRows<Scalar> cog_rows_naive(const Matrix<Scalar>& p_masked) {
    const Scalar ninf = masked_sentinel<Scalar>();
    AttentionRows<Scalar> out;
    out.activation = AttnActivation::Cog;
    out.weights = Matrix<Scalar>::Zero(p_masked.rows(), p_masked.cols());
    for (Index i = 0; i < p_masked.rows(); ++i) {
        Scalar m = 0;
        bool any = false;
        for (Index j = 0; j < p_masked.cols(); ++j) {
            const Scalar v = p_masked(i, j);
            if (v == ninf) continue;
            m = any ? std::max(m, std::abs(v)) : std::abs(v);
            any = true;
        }
        if (!any) {
            ++out.degenerate_rows;
            continue;
        }
        Scalar denom = 0;
        for (Index j = 0; j < p_masked.cols(); ++j) {
            const Scalar v = p_masked(i, j);
            if (v == ninf) continue;
            const Scalar s = v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0));
            const Scalar e = s * std::exp(s * v - m);
            out.weights(i, j) = e;
            denom += std::abs(e);
        }
        if (denom == 0) {
            out.weights.row(i).setZero();
            ++out.degenerate_rows;
            continue;
        }
        out.weights.row(i) /= denom;
    }
    return out;
}

/// Equivalent fast path: sign(p) * softmax(|p|) with masked and exactly-zero
/// entries sent to -inf before the softmax. Excluding zero scores keeps the
/// two routes identical on every input, zeros included.
template <typename Scalar>
AttentionRows<Scalar> cog_rows_fast(const Matrix<Scalar>& p_masked) {
    const Scalar ninf = masked_sentinel<Scalar>();
    const Index n = p_masked.rows();
    AttentionRows<Scalar> out;
    out.activation = AttnActivation::Cog;

    Matrix<Scalar> t =
        ((p_masked.array() == ninf) || (p_masked.array() == Scalar(0)))
            .select(ninf, p_masked.array().abs())
            .matrix();
    ColVec<Scalar> shift = t.rowwise().maxCoeff();
    std::vector<Index> degenerate;
    for (Index i = 0; i < n; ++i)
        if (shift[i] == ninf) {
            degenerate.push_back(i);
            shift[i] = 0;
        }
    Matrix<Scalar> e = (t.array().colwise() - shift.array()).exp().matrix();
    ColVec<Scalar> denom = e.rowwise().sum();
    for (Index i : degenerate) denom[i] = 1;
    // The extra select keeps masked entries at exactly +0 (sign(-inf) is -1).
    out.weights = (p_masked.array() == ninf)
                      .select(Scalar(0),
                              p_masked.array().sign() * (e.array().colwise() / denom.array()))
                      .matrix();
    for (Index i : degenerate) out.weights.row(i).setZero();
    out.degenerate_rows = static_cast<int>(degenerate.size());
    return out;
}

/// Weighted sum of value vectors: o = a v.
template <typename Scalar>
Matrix<Scalar> attn_output(const AttentionRows<Scalar>& a, const Matrix<Scalar>& v) {
    check_shape(a.weights.cols() == v.rows(), "attn_output weights vs values");
    Matrix<Scalar> out(a.weights.rows(), v.cols());
    out.noalias() = a.weights * v;
    return out;
}

/// Gradient of cog rows w.r.t. scores, with sign and the overflow shift m
/// treated as constants (the forward value is exactly m-invariant, so this is
/// the true gradient away from sign boundaries). Per row,
/// J_jl = delta_jl |a_j| - a_j a_l; masked and zero-score entries have a = 0
/// and therefore receive zero gradient.
template <typename Scalar>
Matrix<Scalar> cog_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& grad_a) {
    check_shape(a.rows() == grad_a.rows() && a.cols() == grad_a.cols(), "cog_backward shapes");
    ColVec<Scalar> dot = (grad_a.array() * a.array()).rowwise().sum();
    return (grad_a.array() * a.array().abs() - a.array().colwise() * dot.array()).matrix();
}

/// Standard softmax Jacobian action: J = diag(a) - a a^T per row.
template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& grad_a) {
    check_shape(a.rows() == grad_a.rows() && a.cols() == grad_a.cols(), "softmax_backward shapes");
    ColVec<Scalar> dot = (grad_a.array() * a.array()).rowwise().sum();
    return (a.array() * (grad_a.array().colwise() - dot.array())).matrix();
}

template <typename Scalar>
Matrix<Scalar> activation_backward(AttnActivation act, const Matrix<Scalar>& a,
                                   const Matrix<Scalar>& grad_a) {
    return act == AttnActivation::Cog ? cog_backward(a, grad_a) : softmax_backward(a, grad_a);
}

template <typename Scalar>
AttentionRows<Scalar> activation_rows(AttnActivation act, const Matrix<Scalar>& p_masked) {
    return act == AttnActivation::Cog ? cog_rows_fast(p_masked) : softmax_rows(p_masked);
}

/// Projection matrices of one multi-head attention block. All four are
/// d_model x d_model; heads are contiguous column (w_q/w_k/w_v) or row (w_o)
/// slices of width d_model / n_heads.
template <typename Scalar>
struct AttentionParams {
    Matrix<Scalar> w_q, w_k, w_v, w_o;
    int n_heads = 1;

    Index d_model() const { return w_q.rows(); }
    Index head_dim() const { return w_q.cols() / n_heads; }
};

template <typename Scalar>
AttentionParams<Scalar> zeros_like(const AttentionParams<Scalar>& p) {
    return {Matrix<Scalar>::Zero(p.w_q.rows(), p.w_q.cols()),
            Matrix<Scalar>::Zero(p.w_k.rows(), p.w_k.cols()),
            Matrix<Scalar>::Zero(p.w_v.rows(), p.w_v.cols()),
            Matrix<Scalar>::Zero(p.w_o.rows(), p.w_o.cols()), p.n_heads};
}

/// Everything the backward pass needs from a multi-head forward.
template <typename Scalar>
struct MultiheadTrace {
    Matrix<Scalar> q_rot, k_rot, v; // n x d_model, heads concatenated
    Matrix<Scalar> o_concat;        // n x d_model
    std::vector<AttentionRows<Scalar>> heads;
};

namespace detail {
inline std::vector<int> iota_positions(Index n) {
    std::vector<int> pos(static_cast<std::size_t>(n));
    std::iota(pos.begin(), pos.end(), 0);
    return pos;
}
} // namespace detail

/// Causal multi-head attention: project, rotate q/k, per-head activation
/// (softmax or cog), weighted sum, output projection. Fills `trace` when
/// given so the caller can run the backward pass or inspect the weights.
template <typename Scalar>
Matrix<Scalar> multihead_forward(const Matrix<Scalar>& x, const AttentionParams<Scalar>& ap,
                                 AttnActivation act, double rope_base, bool qk_scale,
                                 MultiheadTrace<Scalar>* trace) {
    const Index n = x.rows();
    const Index d = ap.d_model();
    check_shape(x.cols() == d, "multihead input width vs w_q");
    check_shape(d % ap.n_heads == 0, "d_model divisible by n_heads");
    const Index dh = ap.head_dim();
    const Scalar scale = qk_scale ? Scalar(1) / std::sqrt(static_cast<Scalar>(dh)) : Scalar(1);
    const std::vector<int> pos = detail::iota_positions(n);

    Matrix<Scalar> q = matmul(x, ap.w_q);
    Matrix<Scalar> k = matmul(x, ap.w_k);
    Matrix<Scalar> v = matmul(x, ap.w_v);
    Matrix<Scalar> q_rot(n, d), k_rot(n, d), o_concat(n, d);
    std::vector<AttentionRows<Scalar>> heads;
    heads.reserve(static_cast<std::size_t>(ap.n_heads));

    for (int h = 0; h < ap.n_heads; ++h) {
        const Index c0 = h * dh;
        Matrix<Scalar> qh = rope_apply<Scalar>(q.middleCols(c0, dh), pos, rope_base);
        Matrix<Scalar> kh = rope_apply<Scalar>(k.middleCols(c0, dh), pos, rope_base);
        q_rot.middleCols(c0, dh) = qh;
        k_rot.middleCols(c0, dh) = kh;
        Matrix<Scalar> p = apply_causal_mask(qk_scores<Scalar>(qh, kh, scale));
        AttentionRows<Scalar> a = activation_rows(act, p);
        o_concat.middleCols(c0, dh).noalias() = a.weights * v.middleCols(c0, dh);
        heads.push_back(std::move(a));
    }
    Matrix<Scalar> out = matmul(o_concat, ap.w_o);
    if (trace) {
        trace->q_rot = std::move(q_rot);
        trace->k_rot = std::move(k_rot);
        trace->v = std::move(v);
        trace->o_concat = std::move(o_concat);
        trace->heads = std::move(heads);
    }
    return out;
}

/// One multi-head block with optional capture of per-head weights.
template <typename Scalar>
struct MultiheadResult {
    Matrix<Scalar> out;
    std::vector<AttentionRows<Scalar>> heads; // filled when capture was requested
};

template <typename Scalar>
MultiheadResult<Scalar> multihead_block(const Matrix<Scalar>& x, const AttentionParams<Scalar>& ap,
                                        AttnActivation act, double rope_base = 10000.0,
                                        bool qk_scale = true, bool capture = false) {
    MultiheadResult<Scalar> res;
    if (capture) {
        MultiheadTrace<Scalar> trace;
        res.out = multihead_forward(x, ap, act, rope_base, qk_scale, &trace);
        res.heads = std::move(trace.heads);
    } else {
        res.out = multihead_forward<Scalar>(x, ap, act, rope_base, qk_scale, nullptr);
    }
    return res;
}

/// Backward through multihead_forward. Accumulates weight gradients into
/// grad_ap and returns the gradient w.r.t. the block input.
template <typename Scalar>
Matrix<Scalar> multihead_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                  const AttentionParams<Scalar>& ap,
                                  const MultiheadTrace<Scalar>& trace, AttnActivation act,
                                  double rope_base, bool qk_scale,
                                  AttentionParams<Scalar>& grad_ap) {
    const Index n = x.rows();
    const Index d = ap.d_model();
    const Index dh = ap.head_dim();
    const Scalar scale = qk_scale ? Scalar(1) / std::sqrt(static_cast<Scalar>(dh)) : Scalar(1);
    const std::vector<int> pos = detail::iota_positions(n);

    grad_ap.w_o.noalias() += trace.o_concat.transpose() * grad_out;
    Matrix<Scalar> d_o(n, d);
    d_o.noalias() = grad_out * ap.w_o.transpose();

    Matrix<Scalar> dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < ap.n_heads; ++h) {
        const Index c0 = h * dh;
        const auto a = trace.heads[static_cast<std::size_t>(h)].weights;
        Matrix<Scalar> doh = d_o.middleCols(c0, dh);
        Matrix<Scalar> vh = trace.v.middleCols(c0, dh);
        Matrix<Scalar> grad_a(n, n);
        grad_a.noalias() = doh * vh.transpose();
        dv.middleCols(c0, dh).noalias() = a.transpose() * doh;
        Matrix<Scalar> dp = activation_backward(act, a, grad_a);
        Matrix<Scalar> dqr(n, dh), dkr(n, dh);
        dqr.noalias() = dp * trace.k_rot.middleCols(c0, dh);
        dkr.noalias() = dp.transpose() * trace.q_rot.middleCols(c0, dh);
        dqr *= scale;
        dkr *= scale;
        dq.middleCols(c0, dh) = rope_backward<Scalar>(dqr, pos, rope_base);
        dk.middleCols(c0, dh) = rope_backward<Scalar>(dkr, pos, rope_base);
    }
    grad_ap.w_q.noalias() += x.transpose() * dq;
    grad_ap.w_k.noalias() += x.transpose() * dk;
    grad_ap.w_v.noalias() += x.transpose() * dv;

    Matrix<Scalar> dx(n, d);
    dx.noalias() = dq * ap.w_q.transpose();
    dx.noalias() += dk * ap.w_k.transpose();
    dx.noalias() += dv * ap.w_v.transpose();
    return dx;
}

} // namespace cog
