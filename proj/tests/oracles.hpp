#pragma once

// Test-only oracles: plain scalar-loop implementations kept deliberately
// independent of the library code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "reloc/image.hpp"
#include "reloc/rng.hpp"
#include "reloc/tensor.hpp"

namespace oracles {

using reloc::Mask;
using reloc::ProbabilityMap;
using reloc::Rng;
using reloc::Tensor;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)});
}

inline double clamp_p(double p, double eps) { return std::max(eps, std::min(1.0 - eps, p)); }

inline double mae(const Tensor& plain, const Tensor& restored) {
    double s = 0.0;
    for (size_t i = 0; i < plain.size(); ++i) s += std::abs(plain.v[i] - restored.v[i]);
    return s / static_cast<double>(plain.size());
}

inline double ce(const Tensor& pred, const Tensor& gt, double eps) {
    const size_t per = pred.size() / pred.n;
    double acc = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        double s = 0.0;
        for (size_t t = i * per; t < (i + 1) * per; ++t) {
            const double p = clamp_p(pred.v[t], eps);
            s -= gt.v[t] * std::log(p) + (1.0 - gt.v[t]) * std::log(1.0 - p);
        }
        acc += s / static_cast<double>(per);
    }
    return acc / pred.n;
}

inline double dice(const Tensor& pred, const Tensor& gt, double eps) {
    const size_t per = pred.size() / pred.n;
    double acc = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        double inter = 0.0, ps = 0.0, gs = 0.0;
        for (size_t t = i * per; t < (i + 1) * per; ++t) {
            inter += pred.v[t] * gt.v[t];
            ps += pred.v[t] * pred.v[t];
            gs += gt.v[t] * gt.v[t];
        }
        acc += 1.0 - 2.0 * inter / (ps + gs + eps);
    }
    return acc / pred.n;
}

inline double gen(double d, double eps) { return -std::log(clamp_p(d, eps)); }

inline double disc(double dp, double dr, double eps) {
    return -std::log(clamp_p(dp, eps)) - std::log(1.0 - clamp_p(dr, eps));
}

inline double loc(const Tensor& pred, const Tensor& gt, double l1, double eps_log, double eps_dice) {
    return l1 * ce(pred, gt, eps_log) + (1.0 - l1) * dice(pred, gt, eps_dice);
}

inline double restore_total(double m, double g, double l, double l2, double l3, double l4) {
    return l2 * m + l3 * g + l4 * l;
}

// Central finite difference of f() with respect to *x.
template <class F>
double central_diff(F&& f, double* x, double h) {
    const double orig = *x;
    *x = orig + h;
    const double fp = f();
    *x = orig - h;
    const double fm = f();
    *x = orig;
    return (fp - fm) / (2.0 * h);
}

inline Tensor rand_tensor(Rng& rng, int n, int c, int h, int w, double lo, double hi) {
    Tensor t(n, c, h, w);
    for (double& e : t.v) e = rng.uniform(lo, hi);
    return t;
}

inline Tensor rand_binary_tensor(Rng& rng, int n, int h, int w) {
    Tensor t(n, 1, h, w);
    for (double& e : t.v) e = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

struct Counts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts confusion(const Mask& pred, const Mask& gt) {
    Counts c;
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            const bool p = pred.at(y, x) != 0, g = gt.at(y, x) != 0;
            if (p && g) ++c.tp;
            if (p && !g) ++c.fp;
            if (!p && g) ++c.fn;
            if (!p && !g) ++c.tn;
        }
    return c;
}

inline double f1_of(const Counts& c) {
    return (2 * c.tp + c.fp + c.fn) == 0
               ? 0.0
               : 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

inline double iou_of(const Counts& c) {
    return (c.tp + c.fp + c.fn) == 0 ? 0.0 : c.tp / static_cast<double>(c.tp + c.fp + c.fn);
}

// AUC by exhaustive pair counting, ties worth one half.
inline double auc_pairs(const ProbabilityMap& prob, const Mask& gt) {
    double wins = 0.0;
    long long pairs = 0;
    for (size_t i = 0; i < prob.v.size(); ++i) {
        if (!gt.v[i]) continue;
        for (size_t j = 0; j < prob.v.size(); ++j) {
            if (gt.v[j]) continue;
            ++pairs;
            if (prob.v[i] > prob.v[j]) wins += 1.0;
            else if (prob.v[i] == prob.v[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// Exact balanced-assignment EMD on small equal-size point sets (bitmask DP).
inline double assignment_emd(const std::vector<std::array<double, 2>>& a,
                             const std::vector<std::array<double, 2>>& b) {
    const int n = static_cast<int>(a.size());
    const uint32_t full = (1u << n) - 1;
    std::vector<double> dp(full + 1, 1e300);
    dp[0] = 0.0;
    for (uint32_t mask = 0; mask < full; ++mask) {
        if (dp[mask] >= 1e300) continue;
        const int i = __builtin_popcount(mask);  // next a-point to match
        for (int j = 0; j < n; ++j) {
            if (mask & (1u << j)) continue;
            const double dx = a[i][0] - b[j][0], dy = a[i][1] - b[j][1];
            const double cost = std::sqrt(dx * dx + dy * dy);
            dp[mask | (1u << j)] = std::min(dp[mask | (1u << j)], dp[mask] + cost);
        }
    }
    return dp[full] / n;
}

}  // namespace oracles
