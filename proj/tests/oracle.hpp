#pragma once

// Straight-line loop implementations used as independent references in tests.
// Nothing here goes through the tape or Eigen.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dashfusion/parameters.hpp"
#include "dashfusion/rng.hpp"

namespace oracle {

struct Mat {
    std::size_t r = 0, c = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0) : r(rows), c(cols), v(rows * cols, fill) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

inline Mat from(const dashfusion::Tensor<double>& t) {
    Mat m(t.rank() == 1 ? 1 : t.rows(), t.rank() == 1 ? t.size() : t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) m.v[i] = t[i];
    return m;
}

inline Mat param(const dashfusion::ParameterStore<double>& s, const std::string& name) { return from(s.get(name)); }

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.r, b.c);
    for (std::size_t i = 0; i < a.r; ++i)
        for (std::size_t k = 0; k < a.c; ++k)
            for (std::size_t j = 0; j < b.c; ++j) out(i, j) += a(i, k) * b(k, j);
    return out;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline Mat add_row(const Mat& a, const Mat& row) {
    Mat out = a;
    for (std::size_t i = 0; i < a.r; ++i)
        for (std::size_t j = 0; j < a.c; ++j) out(i, j) += row.v[j];
    return out;
}

inline Mat first_rows(const Mat& a, std::size_t k) {
    Mat out(k, a.c);
    for (std::size_t i = 0; i < k * a.c; ++i) out.v[i] = a.v[i];
    return out;
}

inline Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, double eps = 1e-5) {
    Mat out(x.r, x.c);
    for (std::size_t i = 0; i < x.r; ++i) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < x.c; ++j) mu += x(i, j);
        mu /= static_cast<double>(x.c);
        for (std::size_t j = 0; j < x.c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= static_cast<double>(x.c);
        for (std::size_t j = 0; j < x.c; ++j) out(i, j) = gamma.v[j] * (x(i, j) - mu) / std::sqrt(var + eps) + beta.v[j];
    }
    return out;
}

inline Mat softmax_rows(Mat x) {
    for (std::size_t i = 0; i < x.r; ++i) {
        double mx = x(i, 0), z = 0;
        for (std::size_t j = 1; j < x.c; ++j) mx = std::max(mx, x(i, j));
        for (std::size_t j = 0; j < x.c; ++j) z += (x(i, j) = std::exp(x(i, j) - mx));
        for (std::size_t j = 0; j < x.c; ++j) x(i, j) /= z;
    }
    return x;
}

inline Mat transpose(const Mat& a) {
    Mat out(a.c, a.r);
    for (std::size_t i = 0; i < a.r; ++i)
        for (std::size_t j = 0; j < a.c; ++j) out(j, i) = a(i, j);
    return out;
}

inline Mat head(const Mat& xt, const Mat& xs, const Mat& wq, const Mat& wk, const Mat& wv) {
    Mat s = matmul(matmul(xt, wq), transpose(matmul(xs, wk)));
    for (auto& e : s.v) e /= std::sqrt(static_cast<double>(wq.c));
    return matmul(softmax_rows(s), matmul(xs, wv));
}

/// Multi-head cross attention bound by the `prefix.hN.*` / `prefix.wo` naming.
inline Mat mha(const dashfusion::ParameterStore<double>& s, const std::string& prefix, const Mat& xt, const Mat& xs) {
    std::vector<Mat> heads;
    for (std::size_t h = 0; s.contains(prefix + ".h" + std::to_string(h) + ".wq"); ++h) {
        const std::string p = prefix + ".h" + std::to_string(h);
        heads.push_back(head(xt, xs, param(s, p + ".wq"), param(s, p + ".wk"), param(s, p + ".wv")));
    }
    std::size_t width = 0;
    for (const auto& h : heads) width += h.c;
    Mat cat(xt.r, width);
    std::size_t off = 0;
    for (const auto& h : heads) {
        for (std::size_t i = 0; i < h.r; ++i)
            for (std::size_t j = 0; j < h.c; ++j) cat(i, off + j) = h(i, j);
        off += h.c;
    }
    return matmul(cat, param(s, prefix + ".wo"));
}

inline Mat norm(const dashfusion::ParameterStore<double>& s, const std::string& prefix, const Mat& x) {
    return layer_norm(x, param(s, prefix + ".gamma"), param(s, prefix + ".beta"));
}

inline Mat ffn(const dashfusion::ParameterStore<double>& s, const std::string& prefix, const Mat& x) {
    Mat h = add_row(matmul(x, param(s, prefix + ".w1")), param(s, prefix + ".b1"));
    for (auto& e : h.v) e = e > 0 ? e : 0;
    return add_row(matmul(h, param(s, prefix + ".w2")), param(s, prefix + ".b2"));
}

inline Mat transformer_layer(const dashfusion::ParameterStore<double>& s, const std::string& prefix, const Mat& x) {
    const Mat z = norm(s, prefix + ".ln1", add(x, mha(s, prefix + ".attn", x, x)));
    return norm(s, prefix + ".ln2", add(z, ffn(s, prefix + ".ffn", z)));
}

/// Replaces every parameter with N(0, sd^2) draws so norms and biases are nontrivial.
inline void randomize(dashfusion::ParameterStore<double>& s, std::uint64_t seed, double sd = 0.5) {
    auto rng = dashfusion::derive_rng(seed, 77);
    std::vector<std::string> names;
    for (const auto& p : s) names.push_back(p.name);
    for (const auto& n : names) {
        const auto& cur = s.get(n);
        std::vector<double> v(cur.size());
        for (auto& e : v) e = sd * dashfusion::standard_normal(rng);
        s.set(n, dashfusion::Tensor<double>(cur.shape(), std::move(v)));
    }
}

inline void zero(dashfusion::ParameterStore<double>& s, const std::string& name) {
    s.set(name, dashfusion::Tensor<double>::zeros(s.get(name).shape()));
}

inline double max_abs_diff(const Mat& a, const dashfusion::Tensor<double>& t) {
    double worst = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) worst = std::max(worst, std::abs(a.v[i] - t[i]));
    return a.v.size() == t.size() ? worst : 1e300;
}

}  // namespace oracle
