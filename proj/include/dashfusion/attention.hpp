#pragma once

// Scaled dot-product attention, cross-modal attention and the post-norm
// Transformer layer. Query comes from the target sequence, key/value from the
// source; self-attention is the special case target == source.

#include <cmath>
#include <string>
#include <vector>

#include "dashfusion/parameters.hpp"
#include "dashfusion/tensor.hpp"

namespace dashfusion {

template <std::floating_point T>
struct HeadParams {
    Tensor<T> wq;  // [d x d_k]
    Tensor<T> wk;  // [d x d_k]
    Tensor<T> wv;  // [d x d_v]
};

template <std::floating_point T>
struct AttentionParams {
    std::vector<HeadParams<T>> heads;
    Tensor<T> wo;  // [(h * d_v) x d]
};

template <std::floating_point T>
struct NormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <std::floating_point T>
struct FfnParams {
    Tensor<T> w1, b1;  // [d x d_ff], [d_ff]
    Tensor<T> w2, b2;  // [d_ff x d], [d]
};

template <std::floating_point T>
struct TransformerLayerParams {
    AttentionParams<T> attn;
    NormParams<T> ln1;
    FfnParams<T> ffn;
    NormParams<T> ln2;
};

// ---------------------------------------------------------------------------
// Registration and binding by name prefix.

template <std::floating_point T>
void register_attention(ParameterStore<T>& store, const std::string& prefix, std::size_t d, std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError(prefix + ": head count " + std::to_string(heads) + " does not divide width " + std::to_string(d));
    }
    const std::size_t dk = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::string p = prefix + ".h" + std::to_string(h);
        store.add(p + ".wq", xavier_uniform<T>(d, dk, rng));
        store.add(p + ".wk", xavier_uniform<T>(d, dk, rng));
        store.add(p + ".wv", xavier_uniform<T>(d, dk, rng));
    }
    store.add(prefix + ".wo", xavier_uniform<T>(heads * dk, d, rng));
}

template <std::floating_point T>
void register_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t d) {
    store.add(prefix + ".gamma", Tensor<T>::full({d}, T(1)));
    store.add(prefix + ".beta", Tensor<T>::zeros({d}));
}

template <std::floating_point T>
void register_ffn(ParameterStore<T>& store, const std::string& prefix, std::size_t d, std::size_t d_ff, Rng& rng) {
    store.add(prefix + ".w1", xavier_uniform<T>(d, d_ff, rng));
    store.add(prefix + ".b1", Tensor<T>::zeros({d_ff}));
    store.add(prefix + ".w2", xavier_uniform<T>(d_ff, d, rng));
    store.add(prefix + ".b2", Tensor<T>::zeros({d}));
}

template <std::floating_point T>
void register_transformer_layer(ParameterStore<T>& store, const std::string& prefix, std::size_t d, std::size_t heads,
                                std::size_t d_ff, Rng& rng) {
    register_attention(store, prefix + ".attn", d, heads, rng);
    register_norm(store, prefix + ".ln1", d);
    register_ffn(store, prefix + ".ffn", d, d_ff, rng);
    register_norm(store, prefix + ".ln2", d);
}

template <std::floating_point T>
AttentionParams<T> bind_attention(const ParamView<T>& view, const std::string& prefix) {
    AttentionParams<T> p;
    for (std::size_t h = 0; view.store().contains(prefix + ".h" + std::to_string(h) + ".wq"); ++h) {
        const std::string hp = prefix + ".h" + std::to_string(h);
        p.heads.push_back({view(hp + ".wq"), view(hp + ".wk"), view(hp + ".wv")});
    }
    p.wo = view(prefix + ".wo");
    return p;
}

template <std::floating_point T>
NormParams<T> bind_norm(const ParamView<T>& view, const std::string& prefix) {
    return {view(prefix + ".gamma"), view(prefix + ".beta")};
}

template <std::floating_point T>
FfnParams<T> bind_ffn(const ParamView<T>& view, const std::string& prefix) {
    return {view(prefix + ".w1"), view(prefix + ".b1"), view(prefix + ".w2"), view(prefix + ".b2")};
}

template <std::floating_point T>
TransformerLayerParams<T> bind_transformer_layer(const ParamView<T>& view, const std::string& prefix) {
    return {bind_attention(view, prefix + ".attn"), bind_norm(view, prefix + ".ln1"), bind_ffn(view, prefix + ".ffn"),
            bind_norm(view, prefix + ".ln2")};
}

// ---------------------------------------------------------------------------
// Forward functions.

/// softmax(x_t W_Q (x_s W_K)^T / sqrt(d_k)), one row per target token.
template <std::floating_point T>
Tensor<T> attention_weights(const Tensor<T>& x_t, const Tensor<T>& x_s, const HeadParams<T>& p) {
    detail::require_matrix(x_t, "attention");
    detail::require_matrix(x_s, "attention");
    detail::require(x_t.cols() == x_s.cols(), [&] {
        return "attention: target width " + std::to_string(x_t.cols()) + " != source width " + std::to_string(x_s.cols());
    });
    const auto q = matmul(x_t, p.wq);
    const auto k = matmul(x_s, p.wk);
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(p.wk.cols()));
    return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
}

/// Single-head CA(x_t, x_s): [T_t x d_v].
template <std::floating_point T>
Tensor<T> cross_attention(const Tensor<T>& x_t, const Tensor<T>& x_s, const HeadParams<T>& p) {
    return matmul(attention_weights(x_t, x_s, p), matmul(x_s, p.wv));
}

/// Single-head SA(x) = CA(x, x).
template <std::floating_point T>
Tensor<T> self_attention(const Tensor<T>& x, const HeadParams<T>& p) {
    return cross_attention(x, x, p);
}

/// Heads evaluated independently, concatenated on the feature axis, projected by W_O.
template <std::floating_point T>
Tensor<T> multi_head(const Tensor<T>& x_t, const Tensor<T>& x_s, const AttentionParams<T>& p) {
    detail::require(!p.heads.empty(), "multi_head: no heads");
    std::size_t width = 0;
    for (const auto& h : p.heads) width += h.wv.cols();
    const std::size_t d = x_t.cols();
    if (width != p.wo.rows() || d % p.heads.size() != 0) {
        throw DimensionError("multi_head: " + std::to_string(p.heads.size()) + " heads do not divide width " +
                             std::to_string(d));
    }
    std::vector<Tensor<T>> outs;
    outs.reserve(p.heads.size());
    for (const auto& h : p.heads) outs.push_back(cross_attention(x_t, x_s, h));
    return matmul(outs.size() == 1 ? outs.front() : concat_last_dim(outs), p.wo);
}

/// relu(x W1 + b1) W2 + b2.
template <std::floating_point T>
Tensor<T> feed_forward(const Tensor<T>& x, const FfnParams<T>& p) {
    return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <std::floating_point T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormParams<T>& p) {
    return layer_norm(x, p.gamma, p.beta, T(1e-5));
}

/// Z = LN(X + MHSA(X)); out = LN(Z + FFN(Z)).
template <std::floating_point T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TransformerLayerParams<T>& p) {
    const auto z = apply_norm(add(x, multi_head(x, x, p.attn)), p.ln1);
    return apply_norm(add(z, feed_forward(z, p.ffn)), p.ln2);
}

}  // namespace dashfusion
