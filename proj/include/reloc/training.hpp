#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "reloc/dataio.hpp"
#include "reloc/losses.hpp"
#include "reloc/nets.hpp"

namespace reloc::training {

enum class TrainMode { PretrainPlain, FinetuneDistorted, RelocAlternate, RelocJoint };

const char* mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::PretrainPlain;
    int epochs = 1;
    int batch_size = 8;
    int block = 128;
    int blocks_per_image = 1;
    double lr_r = 1e-4, lr_d = 1e-4, lr_l = 1e-4;
    losses::LossWeights weights;
    dataio::DegradationSpec degradation;
    uint64_t seed = 0;
    double val_frac = 0.1;
    double clip_norm = 5.0;
    nets::UNetConfig restoration{.in_ch = 3, .out_ch = 3, .base_width = 16, .depth = 3,
                                 .residual = true};
    nets::UNetConfig localization{.in_ch = 3, .out_ch = 1, .base_width = 16, .depth = 3,
                                  .residual = false};
    nets::DiscConfig discriminator{.in_ch = 3, .base_width = 16, .n_stages = 3, .input_size = 128};
    std::filesystem::path run_dir;  // when set, EpochLogs stream to <run_dir>/train_log.jsonl

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    std::string mode;
    std::vector<std::string> updated;
    std::map<std::string, double> train_losses;
    std::map<std::string, double> val_losses;
    std::map<std::string, double> lrs;
    std::map<std::string, uint64_t> digests;  // per-module parameter digests

    std::string to_jsonl() const;
};

// Learning-rate plateau rule: when the validation loss fails to descend below
// the best previous value in two consecutive epochs, multiply by 0.8 and
// reset the counter.
struct LrSchedule {
    double lr = 1e-4;
    double best = 0.0;
    bool has_best = false;
    int non_descent = 0;

    void step(double val_loss);
};

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
};

// Standard Adam update (beta1 0.9, beta2 0.999, eps 1e-8) on one parameter
// array; gradients are consumed as-is.
void adam_step(const nets::ParamRef& p, double lr, AdamState& state);

// Global-norm gradient clip followed by Adam over every array; parameters are
// re-quantized to the float32 grid afterwards.
void optimizer_step(const std::vector<nets::ParamRef>& params, double lr,
                    std::vector<AdamState>& states, double clip_norm);

struct TrainResult {
    nets::Checkpoint checkpoint;
    std::vector<EpochLog> logs;
    int best_epoch = 0;
};

struct RelocResult {
    nets::Checkpoint restoration;
    nets::Checkpoint localization;
    nets::Checkpoint discriminator;
    std::vector<EpochLog> logs;
    int best_epoch = 0;
};

// M^P: localization trained on plain blocks with the localization loss.
TrainResult pretrain_plain(const dataio::DatasetManifest& manifest, const TrainConfig& config);

// M^{D|P}: localization initialized from M^P and trained on distorted blocks.
TrainResult finetune_distorted(const nets::Checkpoint& m_p, const dataio::DatasetManifest& manifest,
                               const TrainConfig& config);

// Alternate optimization: odd epochs update the discriminator and restorer
// per minibatch, even epochs update the localizer on restored inputs.
RelocResult train_reloc(const nets::Checkpoint& m_p, const dataio::DatasetManifest& manifest,
                        const TrainConfig& config);

// Ablation baseline: every minibatch updates all three modules.
RelocResult train_joint(const nets::Checkpoint& m_p, const dataio::DatasetManifest& manifest,
                        const TrainConfig& config);

}  // namespace reloc::training
