#pragma once

// Cost of the fusion stage (everything after the encoders, before the head)
// for one sample. A matmul (a x b)(b x c) costs a*b*c; softmax, norms,
// additions and pooling cost nothing.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "dashfusion/model.hpp"

namespace dashfusion {

struct MaddsReport {
    FusionVariant variant = FusionVariant::hbf;
    std::uint64_t analytic = 0;
    std::uint64_t instrumented = 0;
    std::uint64_t matmul_calls = 0;
    double median_us = 0;  // wall clock per fusion-stage call
    std::size_t timing_runs = 0;
    std::size_t warmup_runs = 0;
};

namespace madds {

/// Multi-head attention with `a` query tokens over `b` source tokens (heads
/// of width d/h; the head count cancels out).
inline std::uint64_t attention(std::uint64_t a, std::uint64_t b, std::uint64_t d) {
    return 2 * a * d * d + 2 * b * d * d + 2 * a * b * d;
}

inline std::uint64_t feed_forward(std::uint64_t a, std::uint64_t d, std::uint64_t d_ff) { return 2 * a * d * d_ff; }

inline std::uint64_t transformer_layer(std::uint64_t a, std::uint64_t d, std::uint64_t d_ff) {
    return attention(a, a, d) + feed_forward(a, d, d_ff);
}

}  // namespace madds

inline std::uint64_t analytic_fusion_madds(const ModelConfig& cfg) {
    cfg.validate();
    const std::uint64_t d = cfg.d, ff = cfg.ffn_dim();
    const std::uint64_t tt = cfg.text_len, ta = cfg.audio_len, tv = cfg.vision_len;
    const std::uint64_t align = cfg.temporal_align ? madds::attention(tt, ta, d) + madds::attention(tt, tv, d) : 0;
    if (!cfg.hbf) return align;
    switch (cfg.fusion) {
        case FusionVariant::concat: return 0;
        case FusionVariant::concat_sa: return cfg.concat_sa_layers * madds::transformer_layer(tt + ta + tv, d, ff);
        case FusionVariant::ca: return align;
        case FusionVariant::bf:
        case FusionVariant::hbf: break;
    }
    std::uint64_t total = align;
    std::uint64_t h_rows = tt;
    for (std::size_t l = 1; l <= cfg.fusion_layers; ++l) {
        const std::uint64_t k = cfg.tokens_at(l);
        if (!(l == 1 && cfg.random_bottleneck_seed)) total += madds::transformer_layer(h_rows, d, ff);
        for (std::uint64_t t : {tt, ta, tv}) {
            total += madds::attention(k, t, d);                                  // gather into the bottleneck
            total += madds::attention(t, k, d) + madds::feed_forward(t, d, ff);  // scatter back to the modality
        }
        total += madds::feed_forward(k, d, ff);
        h_rows = k;
    }
    return total;
}

namespace detail {

template <std::floating_point T>
std::array<Tensor<T>, 3> random_encoder_outputs(const ModelConfig& cfg, Rng& rng) {
    std::array<Tensor<T>, 3> x;
    for (auto m : kModalities) {
        std::vector<T> v(cfg.seq_len(m) * cfg.d);
        for (auto& e : v) e = static_cast<T>(standard_normal(rng));
        x[static_cast<std::size_t>(m)] = Tensor<T>::matrix(cfg.seq_len(m), cfg.d, std::move(v));
    }
    return x;
}

}  // namespace detail

/// Analytic count, the count observed by instrumenting every matmul during one
/// fusion-stage call, and the median wall-clock time of `runs` calls after `warmup`.
inline MaddsReport count_madds(const ModelConfig& cfg, std::uint64_t seed = 0, std::size_t runs = 30,
                               std::size_t warmup = 5) {
    MaddsReport r;
    r.variant = cfg.fusion;
    r.analytic = analytic_fusion_madds(cfg);
    const DashFusionModel<float> model(cfg, seed);
    Rng rng = derive_rng(seed, 0x6d61646473ULL);
    const auto x = detail::random_encoder_outputs<float>(cfg, rng);
    const ParamView<float> view(model.parameters());
    {
        MaddsCounter counter;
        ScopedMaddsCount scope(counter);
        model.fusion_stage(view, x);
        r.instrumented = counter.total;
        r.matmul_calls = counter.calls;
    }
    r.warmup_runs = warmup;
    r.timing_runs = runs;
    for (std::size_t i = 0; i < warmup; ++i) model.fusion_stage(view, x);
    std::vector<double> us;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.fusion_stage(view, x);
        const auto t1 = std::chrono::steady_clock::now();
        us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    if (!us.empty()) {
        std::sort(us.begin(), us.end());
        const std::size_t mid = us.size() / 2;
        r.median_us = us.size() % 2 ? us[mid] : 0.5 * (us[mid - 1] + us[mid]);
    }
    return r;
}

}  // namespace dashfusion
