#pragma once

#include <vector>

#include "reloc/tensor.hpp"

namespace reloc::losses {

// Weighting parameters of the objective stack plus the stabilising epsilons.
struct LossWeights {
    double lambda1 = 0.2;    // CE vs DICE mix inside the localization loss
    double lambda2 = 100.0;  // MAE weight in the restoration loss
    double lambda3 = 1.0;    // generator weight
    double lambda4 = 0.05;   // localization weight inside the restoration loss
    double eps_dice = 1e-6;
    double eps_log = 1e-7;

    void validate() const;
};

// Conventions shared by all losses: tensors are NCHW batches, every loss is
// the mean of its per-image value over the batch, and predictions are clamped
// to [eps_log, 1-eps_log] before any log. Gradients are exact for interior
// values and pass straight through the clamp.

// Mean absolute error between a plain and a restored image batch.
double loss_mae(const Tensor& plain, const Tensor& restored);
Tensor loss_mae_grad(const Tensor& plain, const Tensor& restored, double* value = nullptr);

// Generator loss -log f(I_R) from the discriminator output(s).
double loss_gen(double d_restored, double eps_log = 1e-7);
double loss_gen(const std::vector<double>& d_restored, double eps_log = 1e-7);
std::vector<double> loss_gen_grad(const std::vector<double>& d_restored, double eps_log = 1e-7,
                                  double* value = nullptr);

// Discriminator loss -log f(I_P) - log(1 - f(I_R)).
double loss_disc(double d_plain, double d_restored, double eps_log = 1e-7);
double loss_disc(const std::vector<double>& d_plain, const std::vector<double>& d_restored,
                 double eps_log = 1e-7);
void loss_disc_grad(const std::vector<double>& d_plain, const std::vector<double>& d_restored,
                    std::vector<double>& g_plain, std::vector<double>& g_restored,
                    double eps_log = 1e-7, double* value = nullptr);

// Per-pixel binary cross-entropy; pred and gt are [N,1,H,W].
double loss_ce(const Tensor& pred, const Tensor& gt, double eps_log = 1e-7);
Tensor loss_ce_grad(const Tensor& pred, const Tensor& gt, double eps_log = 1e-7,
                    double* value = nullptr);

// Dice loss 1 - 2*sum(P*G) / (sum(P^2) + sum(G^2) + eps).
double loss_dice(const Tensor& pred, const Tensor& gt, double eps_dice = 1e-6);
Tensor loss_dice_grad(const Tensor& pred, const Tensor& gt, double eps_dice = 1e-6,
                      double* value = nullptr);

// Localization loss: lambda1 * CE + (1 - lambda1) * DICE.
double loss_loc(const Tensor& pred, const Tensor& gt, const LossWeights& w);
Tensor loss_loc_grad(const Tensor& pred, const Tensor& gt, const LossWeights& w,
                     double* value = nullptr);

// Total restoration loss: lambda2 * MAE + lambda3 * GEN + lambda4 * LOC.
double loss_restore(double mae, double gen, double loc, const LossWeights& w);

}  // namespace reloc::losses
