#pragma once

// The full graph: per-modality encoders, temporal alignment onto the text
// timeline, the hierarchical bottleneck fusion stack and the regression head.
//
// Layer l of the fusion stack:
//   B^l    = TransformerLayer(H^{l-1})[0 : k_l]            k_l = floor(p / 2^{l-1})
//   H^l    = LN(B^l + MultiCA(B^l, X^{l-1}))              MultiCA = B + sum_m CA(B, X_m)
//   H^l    = LN(H^l + FFN(H^l))
//   Z_m^l  = LN(X_m^{l-1} + CA(X_m^{l-1}, B^l))
//   X_m^l  = LN(Z_m^l + FFN(Z_m^l))

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dashfusion/attention.hpp"
#include "dashfusion/contrastive.hpp"
#include "dashfusion/modality.hpp"
#include "dashfusion/parameters.hpp"
#include "dashfusion/tensor.hpp"

namespace dashfusion {

enum class FusionVariant { concat, concat_sa, ca, bf, hbf };

inline constexpr std::array<FusionVariant, 5> kFusionVariants{FusionVariant::concat, FusionVariant::concat_sa,
                                                              FusionVariant::ca, FusionVariant::bf, FusionVariant::hbf};

inline std::string_view fusion_name(FusionVariant v) {
    switch (v) {
        case FusionVariant::concat: return "concat";
        case FusionVariant::concat_sa: return "concat-sa";
        case FusionVariant::ca: return "ca";
        case FusionVariant::bf: return "bf";
        case FusionVariant::hbf: return "hbf";
    }
    return "?";
}

inline FusionVariant parse_fusion(std::string_view s) {
    for (auto v : kFusionVariants)
        if (fusion_name(v) == s) return v;
    throw ConfigError("unknown fusion variant '" + std::string(s) + "'");
}

/// floor(p / 2^(layer-1)); fewer than one token is a configuration error.
inline std::size_t bottleneck_count(std::size_t p, std::size_t layer) {
    if (layer < 1) throw ConfigError("fusion layers are numbered from 1");
    const std::size_t k = layer - 1 >= 64 ? 0 : p >> (layer - 1);
    if (k < 1) {
        throw ConfigError("bottleneck of " + std::to_string(p) + " tokens cannot be halved down to layer " +
                          std::to_string(layer));
    }
    return k;
}

struct ModelConfig {
    std::size_t d = 128;
    std::size_t heads = 4;
    std::size_t enc_layers = 1;
    std::size_t fusion_layers = 2;     // L
    std::size_t bottleneck_tokens = 8; // p
    std::size_t vocab_size = 256;
    std::size_t audio_dim = 20;
    std::size_t vision_dim = 35;
    std::size_t text_len = 24;
    std::size_t audio_len = 96;
    std::size_t vision_len = 48;

    FusionVariant fusion = FusionVariant::hbf;
    bool temporal_align = true;
    bool hbf = true;                     // false: predict from aligned + pooled unimodal features
    bool random_bottleneck_seed = false; // B^1 from learned random tokens instead of H^0
    std::size_t concat_sa_layers = 1;

    std::size_t ffn_dim() const { return 4 * d; }
    std::size_t seq_len(Modality m) const {
        return m == Modality::text ? text_len : m == Modality::audio ? audio_len : vision_len;
    }
    bool uses_bottleneck() const { return hbf && (fusion == FusionVariant::bf || fusion == FusionVariant::hbf); }

    /// Bottleneck tokens at fusion layer l (BF keeps p at every layer).
    std::size_t tokens_at(std::size_t layer) const {
        if (fusion == FusionVariant::bf) {
            if (bottleneck_tokens < 1) throw ConfigError("bottleneck needs at least one token");
            return bottleneck_tokens;
        }
        return bottleneck_count(bottleneck_tokens, layer);
    }

    std::size_t head_input_width() const {
        if (!hbf) return 4 * d;
        switch (fusion) {
            case FusionVariant::concat: return 3 * d;
            case FusionVariant::concat_sa:
            case FusionVariant::ca: return d;
            case FusionVariant::bf:
            case FusionVariant::hbf: return 4 * d;
        }
        return 4 * d;
    }

    void validate() const {
        if (d == 0 || heads == 0 || d % heads != 0) {
            throw ConfigError("head count " + std::to_string(heads) + " must divide model width " + std::to_string(d));
        }
        if (vocab_size == 0 || audio_dim == 0 || vision_dim == 0 || text_len == 0 || audio_len == 0 || vision_len == 0) {
            throw ConfigError("vocabulary, raw dims and sequence lengths must be positive");
        }
        if (fusion == FusionVariant::concat_sa && concat_sa_layers == 0) throw ConfigError("concat-sa needs a layer");
        if (!uses_bottleneck()) return;
        if (fusion_layers < 1) throw ConfigError("fusion stack needs at least one layer");
        for (std::size_t l = 1; l <= fusion_layers; ++l) tokens_at(l);
        if (!random_bottleneck_seed && tokens_at(1) > text_len) {
            throw ConfigError("first bottleneck takes " + std::to_string(tokens_at(1)) + " tokens but the text has " +
                              std::to_string(text_len));
        }
    }
};

template <std::floating_point T>
struct FusionState {
    std::array<Tensor<T>, 3> x;  // X_m^l, indexed by Modality
    Tensor<T> h;                 // H^l
    Tensor<T> b;                 // B^l (empty scalar at l = 0)
    std::size_t layer = 0;

    const Tensor<T>& features(Modality m) const { return x[static_cast<std::size_t>(m)]; }
};

template <std::floating_point T>
struct FuseLayerParams {
    std::optional<TransformerLayerParams<T>> seed;  // absent when B^l is supplied directly
    std::array<AttentionParams<T>, 3> gather;       // CA(B, X_m)
    NormParams<T> h_ln1;
    FfnParams<T> h_ffn;
    NormParams<T> h_ln2;
    std::array<AttentionParams<T>, 3> scatter;  // CA(X_m, B)
    std::array<NormParams<T>, 3> x_ln1;
    std::array<FfnParams<T>, 3> x_ffn;
    std::array<NormParams<T>, 3> x_ln2;
};

// ---------------------------------------------------------------------------
// Free functions over explicit parameter bundles.

/// H = X_t + CA(X_t, X_a) + CA(X_t, X_v).
template <std::floating_point T>
Tensor<T> temporal_align(const Tensor<T>& x_t, const Tensor<T>& x_a, const Tensor<T>& x_v, const AttentionParams<T>& from_audio,
                         const AttentionParams<T>& from_vision) {
    if (x_a.cols() != x_t.cols() || x_v.cols() != x_t.cols()) {
        throw DimensionError("temporal_align: feature widths differ");
    }
    return add(add(x_t, multi_head(x_t, x_a, from_audio)), multi_head(x_t, x_v, from_vision));
}

/// TransformerLayer(h_prev)[0:k].
template <std::floating_point T>
Tensor<T> init_bottleneck(const Tensor<T>& h_prev, const TransformerLayerParams<T>& seed, std::size_t k) {
    if (k < 1) throw ConfigError("bottleneck needs at least one token");
    if (k > h_prev.rows()) {
        throw ConfigError("bottleneck of " + std::to_string(k) + " tokens exceeds the " + std::to_string(h_prev.rows()) +
                          "-token multimodal sequence");
    }
    return slice_tokens(transformer_layer(h_prev, seed), k);
}

/// b + sum over modalities of CA(b, X_m).
template <std::floating_point T>
Tensor<T> multi_ca(const Tensor<T>& b, const std::array<Tensor<T>, 3>& x, const std::array<AttentionParams<T>, 3>& gather) {
    Tensor<T> out = b;
    for (std::size_t m = 0; m < 3; ++m) {
        if (x[m].cols() != b.cols()) throw DimensionError("multi_ca: feature width mismatch");
        out = add(out, multi_head(b, x[m], gather[m]));
    }
    return out;
}

/// One fusion layer given its bottleneck B^l.
template <std::floating_point T>
FusionState<T> fuse_with_bottleneck(const FusionState<T>& state, const Tensor<T>& b, const FuseLayerParams<T>& p) {
    FusionState<T> next;
    next.layer = state.layer + 1;
    next.b = b;
    auto h = apply_norm(add(b, multi_ca(b, state.x, p.gather)), p.h_ln1);
    next.h = apply_norm(add(h, feed_forward(h, p.h_ffn)), p.h_ln2);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto z = apply_norm(add(state.x[m], multi_head(state.x[m], b, p.scatter[m])), p.x_ln1[m]);
        next.x[m] = apply_norm(add(z, feed_forward(z, p.x_ffn[m])), p.x_ln2[m]);
    }
    return next;
}

/// init_bottleneck on state.h with k tokens, then the fusion layer.
template <std::floating_point T>
FusionState<T> fuse_layer(const FusionState<T>& state, const FuseLayerParams<T>& p, std::size_t k) {
    if (!p.seed) throw ConfigError("fuse_layer: layer has no bottleneck seed transformer");
    return fuse_with_bottleneck(state, init_bottleneck(state.h, *p.seed, k), p);
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
struct SampleInput {
    std::span<const std::uint32_t> tokens;  // [T_t]
    Tensor<T> audio;                        // [T_a x d_a]
    Tensor<T> vision;                       // [T_v x d_v]
};

template <std::floating_point T>
struct FusionOutput {
    Tensor<T> head_input;  // [1 x head_input_width]
    std::optional<FusionState<T>> state;
    std::optional<Tensor<T>> aligned;  // H^0 when the variant computes it
};

template <std::floating_point T>
struct ForwardResult {
    Tensor<T> prediction;  // scalar
    std::optional<FusionState<T>> state;
    GlobalFeature<T> globals;
};

template <std::floating_point T>
class DashFusionModel {
public:
    explicit DashFusionModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng = derive_rng(seed, 0x6d6f64656cULL);
        register_all(rng);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterStore<T>& parameters() noexcept { return params_; }
    const ParameterStore<T>& parameters() const noexcept { return params_; }

    Tensor<T> encode_text(const ParamView<T>& view, std::span<const std::uint32_t> tokens) const {
        if (tokens.size() != cfg_.text_len) {
            throw DimensionError("text has " + std::to_string(tokens.size()) + " tokens, model expects " +
                                 std::to_string(cfg_.text_len));
        }
        auto x = add(embedding(view("enc.text.embed"), tokens), view("enc.text.pos"));
        return encoder_stack(view, "enc.text", x);
    }

    /// Linear projection d_m -> d, learned positions, then the encoder layers.
    Tensor<T> encode_continuous(const ParamView<T>& view, const Tensor<T>& frames, Modality m) const {
        if (m == Modality::text) throw std::invalid_argument("encode_continuous: text goes through encode_text");
        const std::string prefix = "enc." + std::string(modality_name(m));
        const std::size_t raw = m == Modality::audio ? cfg_.audio_dim : cfg_.vision_dim;
        if (frames.rank() != 2 || frames.cols() != raw) {
            throw DimensionError(prefix + ": expected raw dim " + std::to_string(raw) + ", got " + to_string(frames.shape()));
        }
        if (frames.rows() != cfg_.seq_len(m)) {
            throw DimensionError(prefix + ": expected " + std::to_string(cfg_.seq_len(m)) + " frames, got " +
                                 std::to_string(frames.rows()));
        }
        auto x = add(add_bias(matmul(frames, view(prefix + ".proj.w")), view(prefix + ".proj.b")), view(prefix + ".pos"));
        return encoder_stack(view, prefix, x);
    }

    std::array<Tensor<T>, 3> encode(const ParamView<T>& view, const SampleInput<T>& s) const {
        return {encode_text(view, s.tokens), encode_continuous(view, s.audio, Modality::audio),
                encode_continuous(view, s.vision, Modality::vision)};
    }

    /// H^0: temporal alignment, or X_t itself when alignment is switched off.
    Tensor<T> aligned_features(const ParamView<T>& view, const std::array<Tensor<T>, 3>& x) const {
        if (!cfg_.temporal_align) return x[0];
        return temporal_align(x[0], x[1], x[2], bind_attention(view, "align.audio"), bind_attention(view, "align.vision"));
    }

    FuseLayerParams<T> bind_fuse_layer(const ParamView<T>& view, std::size_t layer) const {
        const std::string prefix = "fusion.layer" + std::to_string(layer);
        FuseLayerParams<T> p;
        if (view.store().contains(prefix + ".seed.ln1.gamma")) p.seed = bind_transformer_layer(view, prefix + ".seed");
        p.h_ln1 = bind_norm(view, prefix + ".h.ln1");
        p.h_ffn = bind_ffn(view, prefix + ".h.ffn");
        p.h_ln2 = bind_norm(view, prefix + ".h.ln2");
        for (auto m : kModalities) {
            const auto i = static_cast<std::size_t>(m);
            const std::string mp = prefix + "." + std::string(modality_name(m));
            p.gather[i] = bind_attention(view, mp + ".gather");
            p.scatter[i] = bind_attention(view, mp + ".scatter");
            p.x_ln1[i] = bind_norm(view, mp + ".ln1");
            p.x_ffn[i] = bind_ffn(view, mp + ".ffn");
            p.x_ln2[i] = bind_norm(view, mp + ".ln2");
        }
        return p;
    }

    /// Everything between the encoders and the head.
    FusionOutput<T> fusion_stage(const ParamView<T>& view, const std::array<Tensor<T>, 3>& x) const {
        FusionOutput<T> out;
        auto first_token = [](const Tensor<T>& t) { return slice_tokens(t, 1); };
        auto pooled_row = [this](const Tensor<T>& t) { return reshape(pool_global(t), {1, cfg_.d}); };

        if (!cfg_.hbf) {
            const auto h = aligned_features(view, x);
            out.aligned = h;
            out.head_input = concat_last_dim<T>({pooled_row(h), pooled_row(x[0]), pooled_row(x[1]), pooled_row(x[2])});
            return out;
        }
        switch (cfg_.fusion) {
            case FusionVariant::concat:
                out.head_input = concat_last_dim<T>({pooled_row(x[0]), pooled_row(x[1]), pooled_row(x[2])});
                return out;
            case FusionVariant::concat_sa: {
                auto seq = concat_tokens<T>({x[0], x[1], x[2]});
                for (std::size_t i = 0; i < cfg_.concat_sa_layers; ++i)
                    seq = transformer_layer(seq, bind_transformer_layer(view, "concat_sa.layer" + std::to_string(i)));
                out.head_input = pooled_row(seq);
                return out;
            }
            case FusionVariant::ca: {
                const auto h = aligned_features(view, x);
                out.aligned = h;
                out.head_input = pooled_row(h);
                return out;
            }
            case FusionVariant::bf:
            case FusionVariant::hbf: break;
        }
        FusionState<T> state;
        state.x = x;
        state.h = aligned_features(view, x);
        out.aligned = state.h;
        for (std::size_t l = 1; l <= cfg_.fusion_layers; ++l) {
            const auto p = bind_fuse_layer(view, l);
            if (l == 1 && cfg_.random_bottleneck_seed) {
                state = fuse_with_bottleneck(state, view("fusion.seed_tokens"), p);
            } else {
                state = fuse_layer(state, p, cfg_.tokens_at(l));
            }
        }
        out.head_input = concat_last_dim<T>({first_token(state.x[0]), first_token(state.x[1]), first_token(state.x[2]),
                                             first_token(state.h)});
        out.state = std::move(state);
        return out;
    }

    /// MLP head: width -> d -> 1 with ReLU in between.
    Tensor<T> head(const ParamView<T>& view, const Tensor<T>& input) const {
        const auto hidden = relu(add_bias(matmul(input, view("head.w1")), view("head.b1")));
        return reshape(add_bias(matmul(hidden, view("head.w2")), view("head.b2")), {});
    }

    ForwardResult<T> forward(const ParamView<T>& view, const SampleInput<T>& sample) const {
        const auto x = encode(view, sample);
        auto fused = fusion_stage(view, x);
        ForwardResult<T> out;
        out.prediction = head(view, fused.head_input);
        const Tensor<T> h0 = fused.aligned ? *fused.aligned : aligned_features(view, x);
        out.globals = {pool_global(x[0]), pool_global(x[1]), pool_global(x[2]), pool_global(h0)};
        out.state = std::move(fused.state);
        return out;
    }

    /// Pooled features only (encoders + alignment), e.g. for the similarity index.
    GlobalFeature<T> global_features(const ParamView<T>& view, const SampleInput<T>& sample) const {
        const auto x = encode(view, sample);
        return {pool_global(x[0]), pool_global(x[1]), pool_global(x[2]), pool_global(aligned_features(view, x))};
    }

private:
    Tensor<T> encoder_stack(const ParamView<T>& view, const std::string& prefix, Tensor<T> x) const {
        for (std::size_t i = 0; i < cfg_.enc_layers; ++i)
            x = transformer_layer(x, bind_transformer_layer(view, prefix + ".layer" + std::to_string(i)));
        return x;
    }

    void register_all(Rng& rng) {
        const std::size_t d = cfg_.d, h = cfg_.heads, ff = cfg_.ffn_dim();
        params_.add("enc.text.embed", xavier_uniform<T>(cfg_.vocab_size, d, rng));
        params_.add("enc.text.pos", xavier_uniform<T>(cfg_.text_len, d, rng));
        for (std::size_t i = 0; i < cfg_.enc_layers; ++i)
            register_transformer_layer(params_, "enc.text.layer" + std::to_string(i), d, h, ff, rng);
        for (auto m : {Modality::audio, Modality::vision}) {
            const std::string prefix = "enc." + std::string(modality_name(m));
            params_.add(prefix + ".proj.w", xavier_uniform<T>(m == Modality::audio ? cfg_.audio_dim : cfg_.vision_dim, d, rng));
            params_.add(prefix + ".proj.b", Tensor<T>::zeros({d}));
            params_.add(prefix + ".pos", xavier_uniform<T>(cfg_.seq_len(m), d, rng));
            for (std::size_t i = 0; i < cfg_.enc_layers; ++i)
                register_transformer_layer(params_, prefix + ".layer" + std::to_string(i), d, h, ff, rng);
        }
        if (cfg_.temporal_align) {
            register_attention(params_, "align.audio", d, h, rng);
            register_attention(params_, "align.vision", d, h, rng);
        }
        if (cfg_.uses_bottleneck()) {
            if (cfg_.random_bottleneck_seed) params_.add("fusion.seed_tokens", xavier_uniform<T>(cfg_.tokens_at(1), d, rng));
            for (std::size_t l = 1; l <= cfg_.fusion_layers; ++l) {
                const std::string prefix = "fusion.layer" + std::to_string(l);
                if (l > 1 || !cfg_.random_bottleneck_seed) register_transformer_layer(params_, prefix + ".seed", d, h, ff, rng);
                register_norm(params_, prefix + ".h.ln1", d);
                register_ffn(params_, prefix + ".h.ffn", d, ff, rng);
                register_norm(params_, prefix + ".h.ln2", d);
                for (auto m : kModalities) {
                    const std::string mp = prefix + "." + std::string(modality_name(m));
                    register_attention(params_, mp + ".gather", d, h, rng);
                    register_attention(params_, mp + ".scatter", d, h, rng);
                    register_norm(params_, mp + ".ln1", d);
                    register_ffn(params_, mp + ".ffn", d, ff, rng);
                    register_norm(params_, mp + ".ln2", d);
                }
            }
        } else if (cfg_.hbf && cfg_.fusion == FusionVariant::concat_sa) {
            for (std::size_t i = 0; i < cfg_.concat_sa_layers; ++i)
                register_transformer_layer(params_, "concat_sa.layer" + std::to_string(i), d, h, ff, rng);
        }
        params_.add("head.w1", xavier_uniform<T>(cfg_.head_input_width(), d, rng));
        params_.add("head.b1", Tensor<T>::zeros({d}));
        params_.add("head.w2", xavier_uniform<T>(d, 1, rng));
        params_.add("head.b2", Tensor<T>::zeros({1}));
    }

    ModelConfig cfg_;
    ParameterStore<T> params_;
};

}  // namespace dashfusion
