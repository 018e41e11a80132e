#include "reloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace reloc::losses {

void LossWeights::validate() const {
    if (lambda1 < 0.0 || lambda1 > 1.0)
        throw std::invalid_argument("lambda1 must lie in [0,1], got " + std::to_string(lambda1));
    if (lambda2 < 0.0 || lambda3 < 0.0 || lambda4 < 0.0)
        throw std::invalid_argument("lambda2..4 must be non-negative");
    if (!(eps_dice > 0.0 && eps_dice <= 1e-3) || !(eps_log > 0.0 && eps_log <= 1e-3))
        throw std::invalid_argument("epsilons must lie in (0, 1e-3]");
}

namespace {
inline double clamp_prob(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }
}  // namespace

double loss_mae(const Tensor& plain, const Tensor& restored) {
    require_same_shape(plain, restored, "loss_mae");
    double acc = 0.0;
    for (size_t t = 0; t < plain.size(); ++t) acc += std::abs(plain.v[t] - restored.v[t]);
    return acc / static_cast<double>(plain.size());
}

Tensor loss_mae_grad(const Tensor& plain, const Tensor& restored, double* value) {
    require_same_shape(plain, restored, "loss_mae");
    Tensor g(restored.n, restored.c, restored.h, restored.w);
    const double inv = 1.0 / static_cast<double>(plain.size());
    double acc = 0.0;
    for (size_t t = 0; t < plain.size(); ++t) {
        const double d = restored.v[t] - plain.v[t];
        acc += std::abs(d);
        g.v[t] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    if (value) *value = acc * inv;
    return g;
}

double loss_gen(double d_restored, double eps_log) {
    return -std::log(clamp_prob(d_restored, eps_log));
}

double loss_gen(const std::vector<double>& d_restored, double eps_log) {
    if (d_restored.empty()) throw std::invalid_argument("loss_gen: empty batch");
    double acc = 0.0;
    for (double d : d_restored) acc += loss_gen(d, eps_log);
    return acc / static_cast<double>(d_restored.size());
}

std::vector<double> loss_gen_grad(const std::vector<double>& d_restored, double eps_log,
                                  double* value) {
    if (d_restored.empty()) throw std::invalid_argument("loss_gen: empty batch");
    std::vector<double> g(d_restored.size());
    const double inv = 1.0 / static_cast<double>(d_restored.size());
    double acc = 0.0;
    for (size_t i = 0; i < d_restored.size(); ++i) {
        const double d = clamp_prob(d_restored[i], eps_log);
        acc += -std::log(d);
        g[i] = -inv / d;
    }
    if (value) *value = acc * inv;
    return g;
}

double loss_disc(double d_plain, double d_restored, double eps_log) {
    return -std::log(clamp_prob(d_plain, eps_log)) - std::log(1.0 - clamp_prob(d_restored, eps_log));
}

double loss_disc(const std::vector<double>& d_plain, const std::vector<double>& d_restored,
                 double eps_log) {
    if (d_plain.size() != d_restored.size() || d_plain.empty())
        throw std::invalid_argument("loss_disc: batches must be non-empty and aligned");
    double acc = 0.0;
    for (size_t i = 0; i < d_plain.size(); ++i) acc += loss_disc(d_plain[i], d_restored[i], eps_log);
    return acc / static_cast<double>(d_plain.size());
}

void loss_disc_grad(const std::vector<double>& d_plain, const std::vector<double>& d_restored,
                    std::vector<double>& g_plain, std::vector<double>& g_restored, double eps_log,
                    double* value) {
    if (d_plain.size() != d_restored.size() || d_plain.empty())
        throw std::invalid_argument("loss_disc: batches must be non-empty and aligned");
    const size_t n = d_plain.size();
    const double inv = 1.0 / static_cast<double>(n);
    g_plain.assign(n, 0.0);
    g_restored.assign(n, 0.0);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dp = clamp_prob(d_plain[i], eps_log);
        const double dr = clamp_prob(d_restored[i], eps_log);
        acc += -std::log(dp) - std::log(1.0 - dr);
        g_plain[i] = -inv / dp;
        g_restored[i] = inv / (1.0 - dr);
    }
    if (value) *value = acc * inv;
}

double loss_ce(const Tensor& pred, const Tensor& gt, double eps_log) {
    require_same_shape(pred, gt, "loss_ce");
    const size_t per_image = pred.size() / pred.n;
    double batch_acc = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        double acc = 0.0;
        for (size_t t = i * per_image; t < (i + 1) * per_image; ++t) {
            const double p = clamp_prob(pred.v[t], eps_log);
            const double g = gt.v[t];
            acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
        }
        batch_acc += acc / static_cast<double>(per_image);
    }
    return batch_acc / pred.n;
}

Tensor loss_ce_grad(const Tensor& pred, const Tensor& gt, double eps_log, double* value) {
    require_same_shape(pred, gt, "loss_ce");
    Tensor grad(pred.n, pred.c, pred.h, pred.w);
    const size_t per_image = pred.size() / pred.n;
    const double inv = 1.0 / (static_cast<double>(per_image) * pred.n);
    double batch_acc = 0.0;
    for (size_t t = 0; t < pred.size(); ++t) {
        const double p = clamp_prob(pred.v[t], eps_log);
        const double g = gt.v[t];
        batch_acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
        grad.v[t] = (p - g) / (p * (1.0 - p)) * inv;
    }
    if (value) *value = batch_acc * inv;
    return grad;
}

double loss_dice(const Tensor& pred, const Tensor& gt, double eps_dice) {
    require_same_shape(pred, gt, "loss_dice");
    const size_t per_image = pred.size() / pred.n;
    double batch_acc = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        double inter = 0.0, psq = 0.0, gsq = 0.0;
        for (size_t t = i * per_image; t < (i + 1) * per_image; ++t) {
            inter += pred.v[t] * gt.v[t];
            psq += pred.v[t] * pred.v[t];
            gsq += gt.v[t] * gt.v[t];
        }
        batch_acc += 1.0 - 2.0 * inter / (psq + gsq + eps_dice);
    }
    return batch_acc / pred.n;
}

Tensor loss_dice_grad(const Tensor& pred, const Tensor& gt, double eps_dice, double* value) {
    require_same_shape(pred, gt, "loss_dice");
    Tensor grad(pred.n, pred.c, pred.h, pred.w);
    const size_t per_image = pred.size() / pred.n;
    double batch_acc = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        double inter = 0.0, psq = 0.0, gsq = 0.0;
        for (size_t t = i * per_image; t < (i + 1) * per_image; ++t) {
            inter += pred.v[t] * gt.v[t];
            psq += pred.v[t] * pred.v[t];
            gsq += gt.v[t] * gt.v[t];
        }
        const double den = psq + gsq + eps_dice;
        batch_acc += 1.0 - 2.0 * inter / den;
        // d/dP [1 - 2I/D] = -(2G*D - 2I*2P) / D^2, averaged over the batch
        for (size_t t = i * per_image; t < (i + 1) * per_image; ++t)
            grad.v[t] = -(2.0 * gt.v[t] * den - 4.0 * inter * pred.v[t]) / (den * den) / pred.n;
    }
    if (value) *value = batch_acc / pred.n;
    return grad;
}

double loss_loc(const Tensor& pred, const Tensor& gt, const LossWeights& w) {
    w.validate();
    return w.lambda1 * loss_ce(pred, gt, w.eps_log) +
           (1.0 - w.lambda1) * loss_dice(pred, gt, w.eps_dice);
}

Tensor loss_loc_grad(const Tensor& pred, const Tensor& gt, const LossWeights& w, double* value) {
    w.validate();
    double ce = 0.0, dice = 0.0;
    Tensor g_ce = loss_ce_grad(pred, gt, w.eps_log, &ce);
    const Tensor g_dice = loss_dice_grad(pred, gt, w.eps_dice, &dice);
    for (size_t t = 0; t < g_ce.size(); ++t)
        g_ce.v[t] = w.lambda1 * g_ce.v[t] + (1.0 - w.lambda1) * g_dice.v[t];
    if (value) *value = w.lambda1 * ce + (1.0 - w.lambda1) * dice;
    return g_ce;
}

double loss_restore(double mae, double gen, double loc, const LossWeights& w) {
    w.validate();
    return w.lambda2 * mae + w.lambda3 * gen + w.lambda4 * loc;
}

}  // namespace reloc::losses
