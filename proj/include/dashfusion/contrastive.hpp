#pragma once

// Text-anchored semantic alignment, the label/feature-aware pair sampler and
// the joint objective. Every contrastive term has the NT-Xent form
//
//   l = sum_{p in P} -log( exp(a.p / tau) / sum_{k in P u N} exp(a.k / tau) )
//
// with plain dot-product similarity. The sampler ranks candidates by cosine
// similarity instead.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dashfusion/rng.hpp"
#include "dashfusion/tensor.hpp"

namespace dashfusion {

enum class FeatureView { text, audio, vision, multimodal };

inline constexpr std::array<FeatureView, 4> kFeatureViews{FeatureView::text, FeatureView::audio, FeatureView::vision,
                                                          FeatureView::multimodal};

/// Time-averaged features of one sample: unimodal x̄_t, x̄_a, x̄_v and multimodal h̄.
template <std::floating_point T>
struct GlobalFeature {
    Tensor<T> text, audio, vision, multimodal;

    const Tensor<T>& get(FeatureView v) const {
        switch (v) {
            case FeatureView::text: return text;
            case FeatureView::audio: return audio;
            case FeatureView::vision: return vision;
            case FeatureView::multimodal: return multimodal;
        }
        return text;
    }

    GlobalFeature detach() const { return {text.detach(), audio.detach(), vision.detach(), multimodal.detach()}; }
};

/// Mean over the time axis.
template <std::floating_point T>
Tensor<T> pool_global(const Tensor<T>& features) {
    return mean_pool_time(features);
}

template <std::floating_point T>
Tensor<T> ntxent_loss(const Tensor<T>& anchor, const std::vector<Tensor<T>>& positives,
                      const std::vector<Tensor<T>>& negatives, T tau) {
    if (!(tau > T(0))) throw std::invalid_argument("ntxent_loss: tau must be positive");
    if (positives.empty()) throw std::invalid_argument("ntxent_loss: at least one positive is required");
    std::vector<Tensor<T>> candidates = positives;
    candidates.insert(candidates.end(), negatives.begin(), negatives.end());
    const std::size_t d = anchor.size();
    const auto sims = matmul(reshape(anchor, {1, d}), transpose(stack(candidates)));
    const auto logits = scale(sims, T(1) / tau);
    const auto positive_logits = sum(slice_cols(logits, 0, positives.size()));
    return sub(scale(logsumexp(logits), static_cast<T>(positives.size())), positive_logits);
}

// ---------------------------------------------------------------------------
// Pair sampling

enum class SentimentClass { negative = -1, neutral = 0, positive = 1 };

/// Sign band with a neutral zone |y| < band * label_scale.
inline SentimentClass sentiment_class(double y, double label_scale, double band = 0.1) {
    const double cut = band * label_scale;
    if (y <= -cut) return SentimentClass::negative;
    if (y >= cut) return SentimentClass::positive;
    return SentimentClass::neutral;
}

struct SimilarityIndex {
    std::size_t n = 0;
    std::vector<double> cosine;  // n x n, row-major
    std::vector<SentimentClass> classes;

    double similarity(std::size_t i, std::size_t j) const { return cosine[i * n + j]; }
};

/// Pairwise cosine table over per-sample reference features [N x d]. A zero
/// vector has similarity 0 against every other sample; the diagonal is 1.
inline SimilarityIndex build_similarity_index(const Tensor<double>& features, std::span<const double> labels,
                                              double label_scale, double neutral_band = 0.1) {
    detail::require_matrix(features, "build_similarity_index");
    const std::size_t n = features.rows(), d = features.cols();
    if (n < 2) throw std::invalid_argument("build_similarity_index: need at least 2 samples");
    if (labels.size() != n) throw DimensionError("build_similarity_index: label count differs from feature rows");
    SimilarityIndex index;
    index.n = n;
    index.cosine.assign(n * n, 0.0);
    const auto v = features.values();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += v[i * d + j] * v[i * d + j];
        norms[i] = std::sqrt(s);
    }
    for (std::size_t i = 0; i < n; ++i) {
        index.cosine[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double c = 0;
            if (norms[i] > 0 && norms[j] > 0) {
                for (std::size_t k = 0; k < d; ++k) c += v[i * d + k] * v[j * d + k];
                c /= norms[i] * norms[j];
            }
            index.cosine[i * n + j] = index.cosine[j * n + i] = c;
        }
    }
    index.classes.reserve(n);
    for (double y : labels) index.classes.push_back(sentiment_class(y, label_scale, neutral_band));
    return index;
}

struct PairSet {
    std::size_t anchor = 0;
    std::array<std::size_t, 2> positives{};
    std::array<std::size_t, 4> negatives{};  // [0..1] similar, [2..3] dissimilar
};

enum class PairSkip { none, no_same_class_partner, too_few_negatives };

struct PairSampling {
    std::optional<PairSet> pairs;
    PairSkip skipped = PairSkip::none;
    bool with_replacement = false;
};

namespace detail {

/// Two distinct draws from pool[0..m), or two draws with replacement when m < 2.
inline std::array<std::size_t, 2> draw_two(const std::vector<std::size_t>& pool, std::size_t m, bool replace, Rng& rng) {
    const auto first = static_cast<std::size_t>(uniform_index(rng, m));
    if (replace) return {pool[first], pool[static_cast<std::size_t>(uniform_index(rng, m))]};
    auto second = static_cast<std::size_t>(uniform_index(rng, m - 1));
    if (second >= first) ++second;
    return {pool[first], pool[second]};
}

inline std::size_t quantile_size(std::size_t count, double q) {
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(q * static_cast<double>(count))));
}

}  // namespace detail

/// Positives: two same-class samples from the top-q similarity quantile.
/// Negatives: two different-class samples from the top-q quantile and two
/// from the bottom-q quantile. Falls back to drawing with replacement when
/// fewer than 4 different-class samples exist.
inline PairSampling sample_pairs(const SimilarityIndex& index, std::size_t anchor, Rng& rng, double quantile = 0.25) {
    if (anchor >= index.n) throw std::out_of_range("sample_pairs: anchor out of range");
    std::vector<std::size_t> same, other;
    for (std::size_t j = 0; j < index.n; ++j) {
        if (j == anchor) continue;
        (index.classes[j] == index.classes[anchor] ? same : other).push_back(j);
    }
    PairSampling out;
    if (same.empty()) {
        out.skipped = PairSkip::no_same_class_partner;
        return out;
    }
    if (other.size() < 2) {
        out.skipped = PairSkip::too_few_negatives;
        return out;
    }
    auto by_similarity = [&](std::size_t a, std::size_t b) {
        const double sa = index.similarity(anchor, a), sb = index.similarity(anchor, b);
        return sa != sb ? sa > sb : a < b;
    };
    std::sort(same.begin(), same.end(), by_similarity);
    std::sort(other.begin(), other.end(), by_similarity);

    PairSet set;
    set.anchor = anchor;
    if (same.size() == 1) {
        set.positives = {same[0], same[0]};
        out.with_replacement = true;
    } else if (same.size() == 2) {
        set.positives = {same[0], same[1]};
    } else {
        set.positives = detail::draw_two(same, std::min(same.size(), detail::quantile_size(same.size(), quantile)), false, rng);
    }

    const bool replace = other.size() < 4;
    const std::size_t m = replace ? (other.size() + 1) / 2 : std::min(other.size() / 2, detail::quantile_size(other.size(), quantile));
    std::vector<std::size_t> dissimilar(other.end() - static_cast<std::ptrdiff_t>(m), other.end());
    const auto hi = detail::draw_two(other, m, replace, rng);
    const auto lo = detail::draw_two(dissimilar, m, replace, rng);
    set.negatives = {hi[0], hi[1], lo[0], lo[1]};
    out.with_replacement = out.with_replacement || replace;
    out.pairs = set;
    return out;
}

// ---------------------------------------------------------------------------
// Batch objective

struct ContrastiveOptions {
    double tau = 0.5;
    bool semantic = true;
    bool scl = true;
    double semantic_weight = 1.0;
    double scl_weight = 1.0;
};

template <std::floating_point T>
struct PairFeatures {
    std::array<GlobalFeature<T>, 2> positives;
    std::array<GlobalFeature<T>, 4> negatives;
};

template <std::floating_point T>
struct ContrastiveLoss {
    Tensor<T> total;       // (1/n) sum_i l_cl^i
    double semantic = 0;   // batch mean of the semantic-alignment part
    double supervised = 0; // batch mean of the supervised part
};

/// Per sample i: semantic terms anchor x̄_t(i) against x̄_a(i) (resp. x̄_v(i))
/// with the other in-batch samples of that modality as negatives, plus, when a
/// pair set exists, one supervised term per feature view against the pair's
/// features of the same view. The result is the batch mean.
template <std::floating_point T>
ContrastiveLoss<T> contrastive_batch_loss(std::span<const GlobalFeature<T>> batch,
                                          std::span<const std::optional<PairFeatures<T>>> pairs,
                                          const ContrastiveOptions& opt) {
    if (!pairs.empty() && pairs.size() != batch.size()) {
        throw DimensionError("contrastive_batch_loss: pair list length differs from batch size");
    }
    const T tau = static_cast<T>(opt.tau);
    const std::size_t n = batch.size();
    std::vector<Tensor<T>> per_sample;
    double semantic_total = 0, supervised_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tensor<T>> terms;
        if (opt.semantic) {
            std::vector<Tensor<T>> sem;
            for (FeatureView m : {FeatureView::audio, FeatureView::vision}) {
                std::vector<Tensor<T>> negatives;
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i) negatives.push_back(batch[j].get(m));
                sem.push_back(ntxent_loss(batch[i].text, {batch[i].get(m)}, negatives, tau));
            }
            const auto s = scale(sum(stack(sem)), static_cast<T>(opt.semantic_weight));
            semantic_total += static_cast<double>(s.item());
            terms.push_back(s);
        }
        if (opt.scl && !pairs.empty() && pairs[i]) {
            const auto& pf = *pairs[i];
            std::vector<Tensor<T>> scl;
            for (FeatureView v : kFeatureViews) {
                std::vector<Tensor<T>> pos, neg;
                for (const auto& p : pf.positives) pos.push_back(p.get(v));
                for (const auto& k : pf.negatives) neg.push_back(k.get(v));
                scl.push_back(ntxent_loss(batch[i].get(v), pos, neg, tau));
            }
            const auto s = scale(sum(stack(scl)), static_cast<T>(opt.scl_weight));
            supervised_total += static_cast<double>(s.item());
            terms.push_back(s);
        }
        if (!terms.empty()) per_sample.push_back(terms.size() == 1 ? terms[0] : add(terms[0], terms[1]));
    }
    ContrastiveLoss<T> out;
    if (n == 0) return out;
    out.total = per_sample.empty() ? Tensor<T>::scalar(T(0)) : scale(sum(stack(per_sample)), T(1) / static_cast<T>(n));
    out.semantic = semantic_total / static_cast<double>(n);
    out.supervised = supervised_total / static_cast<double>(n);
    return out;
}

/// Mean squared error over a batch of scalar predictions.
template <std::floating_point T>
Tensor<T> mse_loss(const Tensor<T>& predictions, std::span<const T> labels) {
    if (predictions.size() != labels.size()) {
        throw DimensionError("mse_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const Tensor<T> y(predictions.shape(), std::vector<T>(labels.begin(), labels.end()));
    const auto diff = sub(predictions, y);
    return mean(mul(diff, diff));
}

/// L_pred + lambda * L_con.
template <std::floating_point T>
Tensor<T> total_loss(const Tensor<T>& predictions, std::span<const T> labels, const Tensor<T>& contrastive, T lambda) {
    return add(mse_loss(predictions, labels), scale(contrastive, lambda));
}

}  // namespace dashfusion
