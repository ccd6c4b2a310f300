#pragma once

// Brute-force reimplementation of the sentiment metrics: explicit edge lists,
// confusion matrices with rational precision/recall, two-pass statistics.

#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

namespace metric_oracle {

using Vec = std::vector<double>;

struct Frac {
    __int128 n = 0, d = 1;

    static __int128 gcd(__int128 a, __int128 b) {
        if (a < 0) a = -a;
        while (b != 0) {
            const __int128 t = a % b;
            a = b;
            b = t < 0 ? -t : t;
        }
        return a == 0 ? 1 : a;
    }
    Frac reduced() const {
        const auto g = gcd(n, d);
        return {n / g, d / g};
    }
    Frac operator+(Frac o) const { return Frac{n * o.d + o.n * d, d * o.d}.reduced(); }
    Frac operator*(Frac o) const { return Frac{n * o.n, d * o.d}.reduced(); }
    Frac operator/(Frac o) const { return Frac{n * o.d, d * o.n}.reduced(); }
    bool zero() const { return n == 0; }

    // Correctly rounded while both parts stay below 2^53.
    double value() const {
        const auto r = reduced();
        return static_cast<double>(static_cast<long long>(r.n)) / static_cast<double>(static_cast<long long>(r.d));
    }
};

struct Result {
    double acc2_nn, acc2_np, f1_nn, f1_np, acc3, acc5, acc7, mae;
    std::optional<double> corr;
};

inline int classify(double v, const Vec& edges) {
    int c = 0;
    for (double e : edges) c += v >= e;
    return c;
}

inline Vec equal_edges(int k, double s) {
    Vec e;
    for (int i = 1; i < k; ++i) e.push_back(-s + 2 * s * i / k);
    return e;
}

inline double f1_weighted(const std::vector<int>& p, const std::vector<int>& t, int classes) {
    if (p.empty()) return 0.0;
    std::vector<std::vector<long long>> cm(classes, std::vector<long long>(classes, 0));
    for (std::size_t i = 0; i < p.size(); ++i) cm[t[i]][p[i]]++;
    Frac out;
    for (int c = 0; c < classes; ++c) {
        long long row = 0, col = 0;
        for (int k = 0; k < classes; ++k) row += cm[c][k], col += cm[k][c];
        if (row == 0 || cm[c][c] == 0) continue;
        const Frac prec{cm[c][c], col}, rec{cm[c][c], row};
        const Frac f1 = Frac{2, 1} * prec * rec / (prec + rec);
        out = out + f1 * Frac{row, static_cast<long long>(p.size())};
    }
    return out.value();
}

inline Result brute_force(const Vec& p, const Vec& y, double s) {
    Result b{};
    std::vector<int> pn, tn, pp, tp;
    int h3 = 0, h5 = 0, h7 = 0;
    const auto e3 = equal_edges(3, s), e5 = equal_edges(5, s);
    auto seven = [s](double v) {
        const double r = std::round(v * 3 / s);
        return r < -3 ? -3 : r > 3 ? 3 : r;
    };
    for (std::size_t i = 0; i < p.size(); ++i) {
        pn.push_back(p[i] < 0 ? 0 : 1);
        tn.push_back(y[i] < 0 ? 0 : 1);
        if (y[i] != 0) {
            pp.push_back(p[i] > 0 ? 1 : 0);
            tp.push_back(y[i] > 0 ? 1 : 0);
        }
        h3 += classify(p[i], e3) == classify(y[i], e3);
        h5 += classify(p[i], e5) == classify(y[i], e5);
        h7 += seven(p[i]) == seven(y[i]);
        b.mae += std::abs(p[i] - y[i]) / static_cast<double>(p.size());
    }
    auto acc = [](const std::vector<int>& a, const std::vector<int>& t) {
        int hit = 0;
        for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == t[i];
        return a.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(a.size());
    };
    b.acc2_nn = acc(pn, tn);
    b.acc2_np = acc(pp, tp);
    b.f1_nn = f1_weighted(pn, tn, 2);
    b.f1_np = f1_weighted(pp, tp, 2);
    b.acc3 = static_cast<double>(h3) / static_cast<double>(p.size());
    b.acc5 = static_cast<double>(h5) / static_cast<double>(p.size());
    b.acc7 = static_cast<double>(h7) / static_cast<double>(p.size());
    const double n = static_cast<double>(p.size());
    double mp = 0, my = 0;
    for (std::size_t i = 0; i < p.size(); ++i) mp += p[i] / n, my += y[i] / n;
    double cov = 0, vp = 0, vy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cov += (p[i] - mp) * (y[i] - my);
        vp += (p[i] - mp) * (p[i] - mp);
        vy += (y[i] - my) * (y[i] - my);
    }
    if (p.size() >= 2 && vp > 0 && vy > 0) b.corr = cov / std::sqrt(vp) / std::sqrt(vy);
    return b;
}

}  // namespace metric_oracle
