#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dashfusion/errors.hpp"

namespace dashfusion {

struct MetricsOptions {
    double label_scale = 3.0;
    // Interior bin edges; empty means equal-width bins over [-scale, scale].
    std::vector<double> acc3_edges;
    std::vector<double> acc5_edges;
};

struct MetricsReport {
    std::size_t count = 0;
    std::size_t np_count = 0;  // samples with a non-zero label
    double acc2_nn = 0;
    double acc2_np = 0;
    double f1_nn = 0;  // support-weighted
    double f1_np = 0;
    double acc3 = 0;
    double acc5 = 0;
    double acc7 = 0;
    double mae = 0;
    std::optional<double> corr;  // empty when either side has zero variance
};

/// Class index of v among `k` classes: equal-width bins over [-scale, scale]
/// (values outside are clamped), or the count of interior edges <= v.
inline int bin_index(double v, std::size_t k, double scale, const std::vector<double>& edges) {
    if (!edges.empty()) {
        if (edges.size() + 1 != k) throw ConfigError("bin edges: need " + std::to_string(k - 1) + " interior edges");
        return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
    const double u = (std::clamp(v, -scale, scale) + scale) / (2 * scale);
    return std::min(static_cast<int>(std::floor(u * static_cast<double>(k))), static_cast<int>(k) - 1);
}

/// round(v * 3 / scale) clamped to [-3, 3].
inline int acc7_class(double v, double scale) { return static_cast<int>(std::clamp(std::round(v * 3.0 / scale), -3.0, 3.0)); }

namespace detail {

using u128 = unsigned __int128;

inline u128 gcd128(u128 a, u128 b) {
    while (b != 0) {
        const u128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

/// num / den rounded once; exact operands below 2^53 make the division correctly rounded.
inline double ratio_to_double(u128 num, u128 den) {
    const u128 g = gcd128(num, den);
    num /= g;
    den /= g;
    constexpr u128 exact = u128{1} << 53;
    if (num < exact && den < exact) return static_cast<double>(num) / static_cast<double>(den);
    return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

}  // namespace detail

/// Support-weighted mean of per-class F1 over the classes present in `truth`,
/// summed as an exact fraction and rounded once.
inline double weighted_f1(std::span<const int> pred, std::span<const int> truth) {
    if (pred.empty()) return 0.0;
    std::map<int, std::uint64_t> tp, fp, fn, support;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++support[truth[i]];
        if (pred[i] == truth[i]) {
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[truth[i]];
        }
    }
    // sum over c of support_c * 2 tp_c / (2 tp_c + fp_c + fn_c)
    detail::u128 num = 0, den = 1;
    for (const auto& [c, s] : support) {
        if (tp[c] == 0) continue;
        const detail::u128 a = detail::u128{s} * 2 * tp[c], d = 2 * tp[c] + fp[c] + fn[c];
        num = num * d + a * den;
        den *= d;
        const auto g = detail::gcd128(num, den);
        num /= g;
        den /= g;
    }
    return detail::ratio_to_double(num, den * pred.size());
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size();
    if (n < 2) return std::nullopt;
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0) || !(sbb > 0)) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline MetricsReport evaluate(std::span<const double> predictions, std::span<const double> labels,
                              const MetricsOptions& opt = {}) {
    if (predictions.size() != labels.size()) {
        throw DimensionError("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (predictions.empty()) throw std::invalid_argument("evaluate: no samples");
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!std::isfinite(predictions[i]) || !std::isfinite(labels[i])) throw NumericError("evaluate: non-finite value");
    }
    const double s = opt.label_scale;
    const std::size_t n = predictions.size();
    MetricsReport r;
    r.count = n;

    std::vector<int> p_nn, t_nn, p_np, t_np;
    std::size_t hit3 = 0, hit5 = 0, hit7 = 0;
    double abs_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = predictions[i], y = labels[i];
        p_nn.push_back(p >= 0);
        t_nn.push_back(y >= 0);
        if (y != 0) {
            p_np.push_back(p > 0);
            t_np.push_back(y > 0);
        }
        hit3 += bin_index(p, 3, s, opt.acc3_edges) == bin_index(y, 3, s, opt.acc3_edges);
        hit5 += bin_index(p, 5, s, opt.acc5_edges) == bin_index(y, 5, s, opt.acc5_edges);
        hit7 += acc7_class(p, s) == acc7_class(y, s);
        abs_err += std::abs(p - y);
    }
    auto accuracy = [](const std::vector<int>& a, const std::vector<int>& b) {
        if (a.empty()) return 0.0;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
        return static_cast<double>(hit) / static_cast<double>(a.size());
    };
    const double dn = static_cast<double>(n);
    r.np_count = t_np.size();
    r.acc2_nn = accuracy(p_nn, t_nn);
    r.acc2_np = accuracy(p_np, t_np);
    r.f1_nn = weighted_f1(p_nn, t_nn);
    r.f1_np = weighted_f1(p_np, t_np);
    r.acc3 = static_cast<double>(hit3) / dn;
    r.acc5 = static_cast<double>(hit5) / dn;
    r.acc7 = static_cast<double>(hit7) / dn;
    r.mae = abs_err / dn;
    r.corr = pearson(predictions, labels);
    return r;
}

}  // namespace dashfusion
