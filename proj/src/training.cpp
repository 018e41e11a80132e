#include "reloc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace reloc::training {

const char* mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::PretrainPlain: return "pretrain_plain";
        case TrainMode::FinetuneDistorted: return "finetune_distorted";
        case TrainMode::RelocAlternate: return "reloc_alternate";
        case TrainMode::RelocJoint: return "reloc_joint";
    }
    return "?";
}

TrainMode parse_mode(const std::string& s) {
    if (s == "pretrain_plain") return TrainMode::PretrainPlain;
    if (s == "finetune_distorted") return TrainMode::FinetuneDistorted;
    if (s == "reloc_alternate") return TrainMode::RelocAlternate;
    if (s == "reloc_joint") return TrainMode::RelocJoint;
    throw std::invalid_argument("unknown training mode: " + s);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (blocks_per_image < 1) throw std::invalid_argument("blocks_per_image must be >= 1");
    if (lr_r <= 0.0 || lr_d <= 0.0 || lr_l <= 0.0) throw std::invalid_argument("learning rates must be > 0");
    if (clip_norm <= 0.0) throw std::invalid_argument("clip_norm must be > 0");
    if (!(val_frac >= 0.0 && val_frac < 1.0)) throw std::invalid_argument("val_frac must be in [0,1)");
    weights.validate();
    degradation.validate();
    if (block % localization.granularity() != 0)
        throw std::invalid_argument("block size must be divisible by the localization granularity");
    if (mode == TrainMode::RelocAlternate || mode == TrainMode::RelocJoint) {
        if (block % restoration.granularity() != 0)
            throw std::invalid_argument("block size must be divisible by the restoration granularity");
        if (discriminator.input_size != block)
            throw std::invalid_argument("discriminator input_size must equal the training block size");
    }
}

std::string EpochLog::to_jsonl() const {
    json j{{"epoch", epoch}, {"mode", mode}, {"updated", updated},
           {"losses", train_losses}, {"val", val_losses}, {"lrs", lrs},
           {"digests", digests}};
    return j.dump();
}

void LrSchedule::step(double val_loss) {
    if (!has_best || val_loss < best) {
        best = val_loss;
        has_best = true;
        non_descent = 0;
        return;
    }
    if (++non_descent >= 2) {
        lr *= 0.8;
        non_descent = 0;
    }
}

void adam_step(const nets::ParamRef& p, double lr, AdamState& state) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (state.m.size() != p.count) {
        state.m.assign(p.count, 0.0);
        state.v.assign(p.count, 0.0);
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t i = 0; i < p.count; ++i) {
        const double g = p.grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void optimizer_step(const std::vector<nets::ParamRef>& params, double lr,
                    std::vector<AdamState>& states, double clip_norm) {
    if (states.size() != params.size()) states.resize(params.size());
    double sq = 0.0;
    for (const nets::ParamRef& p : params)
        for (size_t i = 0; i < p.count; ++i) sq += p.grad[i] * p.grad[i];
    const double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (const nets::ParamRef& p : params)
            for (size_t i = 0; i < p.count; ++i) p.grad[i] *= scale;
    }
    for (size_t a = 0; a < params.size(); ++a) adam_step(params[a], lr, states[a]);
    nets::quantize_params_f32(params);
}

namespace {

using dataio::DatasetManifest;
using dataio::DegradationSpec;
using dataio::Sample;

struct LoadedSample {
    std::string id;
    Image plain;
    Mask mask;
    std::optional<Image> fixed_distorted;  // cache for the fixed-QF regime
};

struct Batch {
    Tensor plain;
    Tensor distorted;  // empty in plain-only regimes
    Tensor mask;
    int n = 0;
};

std::vector<LoadedSample> load_all(const DatasetManifest& manifest) {
    if (manifest.empty()) throw std::invalid_argument("training: empty manifest");
    std::vector<LoadedSample> out;
    out.reserve(manifest.size());
    for (const auto& ref : manifest.entries) {
        Sample s = dataio::load_sample(ref);
        out.push_back({s.id, std::move(s.plain), std::move(s.mask), std::nullopt});
    }
    return out;
}

// Deterministic validation carve: shuffle indices once, take ~val_frac
// (at least 1, never all) for validation.
void carve_validation(size_t n, double val_frac, uint64_t seed, std::vector<size_t>& train_idx,
                      std::vector<size_t>& val_idx) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::derive(seed, 0x7a1));
    rng.shuffle(order);
    size_t n_val = 0;
    if (n >= 2 && val_frac > 0.0)
        n_val = std::clamp<size_t>(static_cast<size_t>(std::lround(val_frac * static_cast<double>(n))),
                                   1, n - 1);
    val_idx.assign(order.begin(), order.begin() + n_val);
    train_idx.assign(order.begin() + n_val, order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
}

Image distort_sample(LoadedSample& s, const DegradationSpec& spec, Rng& qf_rng) {
    if (spec.mode == DegradationSpec::Mode::Fixed) {
        if (!s.fixed_distorted) s.fixed_distorted = dataio::jpeg_distort(s.plain, spec.qf);
        return *s.fixed_distorted;
    }
    return dataio::jpeg_distort(s.plain, dataio::sample_qf(spec, qf_rng));
}

std::vector<Batch> to_batches(const std::vector<Sample>& blocks, int batch_size,
                              bool with_distorted) {
    std::vector<Batch> batches;
    for (size_t start = 0; start < blocks.size(); start += batch_size) {
        const size_t end = std::min(blocks.size(), start + batch_size);
        std::vector<const Image*> plains, dists;
        std::vector<const Mask*> masks;
        for (size_t i = start; i < end; ++i) {
            plains.push_back(&blocks[i].plain);
            masks.push_back(&blocks[i].mask);
            if (with_distorted) dists.push_back(&*blocks[i].distorted);
        }
        Batch b;
        b.plain = images_to_tensor(plains);
        if (with_distorted) b.distorted = images_to_tensor(dists);
        b.mask = masks_to_tensor(masks);
        b.n = static_cast<int>(end - start);
        batches.push_back(std::move(b));
    }
    return batches;
}

// Blocks for one epoch: shuffled sample order, per-epoch distortion (fresh
// uniform QF draws each epoch), aligned random crops.
std::vector<Batch> epoch_batches(std::vector<LoadedSample>& samples,
                                 const std::vector<size_t>& idx, const TrainConfig& cfg, int epoch,
                                 bool with_distorted) {
    std::vector<size_t> order = idx;
    Rng shuffle_rng(Rng::derive(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng qf_rng(Rng::derive(cfg.seed, 2000 + static_cast<uint64_t>(epoch)));
    Rng block_rng(Rng::derive(cfg.seed, 3000 + static_cast<uint64_t>(epoch)));

    std::vector<Sample> blocks;
    blocks.reserve(order.size() * cfg.blocks_per_image);
    for (size_t si : order) {
        LoadedSample& ls = samples[si];
        Sample s;
        s.id = ls.id;
        s.plain = ls.plain;
        s.mask = ls.mask;
        if (with_distorted) s.distorted = distort_sample(ls, cfg.degradation, qf_rng);
        auto crops = dataio::extract_blocks(s, cfg.block, cfg.blocks_per_image, block_rng);
        for (auto& c : crops) blocks.push_back(std::move(c));
    }
    return to_batches(blocks, cfg.batch_size, with_distorted);
}

// Validation inputs are frozen once per run (fixed crops, fixed per-sample QF).
std::vector<Batch> validation_batches(std::vector<LoadedSample>& samples,
                                      const std::vector<size_t>& idx, const TrainConfig& cfg,
                                      bool with_distorted) {
    Rng rng(Rng::derive(cfg.seed, 0x7a2));
    std::vector<Sample> blocks;
    for (size_t si : idx) {
        LoadedSample& ls = samples[si];
        Sample s;
        s.id = ls.id;
        s.plain = ls.plain;
        s.mask = ls.mask;
        if (with_distorted) {
            if (cfg.degradation.mode == DegradationSpec::Mode::Fixed)
                s.distorted = distort_sample(ls, cfg.degradation, rng);
            else
                s.distorted = dataio::jpeg_distort(ls.plain, dataio::sample_qf(cfg.degradation, rng));
        }
        auto crops = dataio::extract_blocks(s, cfg.block, cfg.blocks_per_image, rng);
        for (auto& c : crops) blocks.push_back(std::move(c));
    }
    return to_batches(blocks, cfg.batch_size, with_distorted);
}

std::vector<double> snapshot(const std::vector<nets::ParamRef>& params) {
    std::vector<double> flat;
    flat.reserve(nets::param_count(params));
    for (const auto& p : params) flat.insert(flat.end(), p.data, p.data + p.count);
    return flat;
}

void restore_snapshot(const std::vector<nets::ParamRef>& params, const std::vector<double>& flat) {
    size_t off = 0;
    for (const auto& p : params) {
        std::copy(flat.begin() + off, flat.begin() + off + p.count, p.data);
        off += p.count;
    }
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    Tensor out(a.n + b.n, a.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

struct LogSink {
    std::ofstream file;
    std::vector<EpochLog>* collected = nullptr;

    LogSink(const std::filesystem::path& run_dir, std::vector<EpochLog>& logs) : collected(&logs) {
        if (!run_dir.empty()) {
            std::filesystem::create_directories(run_dir);
            file.open(run_dir / "train_log.jsonl", std::ios::trunc);
        }
    }
    void push(EpochLog log) {
        if (file.is_open()) file << log.to_jsonl() << "\n" << std::flush;
        collected->push_back(std::move(log));
    }
};

double validation_loss_localizer(nets::LocalizationNet& loc, nets::RestorationNet* restorer,
                                 std::vector<Batch>& val, bool use_distorted,
                                 const losses::LossWeights& w) {
    if (val.empty()) return 0.0;
    double acc = 0.0;
    int total = 0;
    for (Batch& b : val) {
        const Tensor* input = use_distorted ? &b.distorted : &b.plain;
        Tensor in = *input;
        if (restorer) in = restorer->forward(in, false);
        const Tensor p = loc.forward(in, false);
        acc += losses::loss_loc(p, b.mask, w) * b.n;
        total += b.n;
    }
    return acc / total;
}

// Restoration validation loss with the adversarial term excluded.
double validation_loss_restorer(nets::RestorationNet& res, nets::LocalizationNet& loc,
                                std::vector<Batch>& val, const losses::LossWeights& w) {
    if (val.empty()) return 0.0;
    double acc = 0.0;
    int total = 0;
    for (Batch& b : val) {
        const Tensor restored = res.forward(b.distorted, false);
        const double mae = losses::loss_mae(b.plain, restored);
        const Tensor p = loc.forward(restored, false);
        const double ll = losses::loss_loc(p, b.mask, w);
        acc += (w.lambda2 * mae + w.lambda4 * ll) * b.n;
        total += b.n;
    }
    return acc / total;
}

TrainResult train_localizer(nets::LocalizationNet& loc, const DatasetManifest& manifest,
                            const TrainConfig& cfg, bool on_distorted, const char* phase) {
    cfg.validate();
    std::vector<LoadedSample> samples = load_all(manifest);
    std::vector<size_t> train_idx, val_idx;
    carve_validation(samples.size(), cfg.val_frac, cfg.seed, train_idx, val_idx);
    if (train_idx.empty()) throw std::invalid_argument("training: no samples left after validation carve");
    std::vector<Batch> val = validation_batches(samples, val_idx, cfg, on_distorted);

    auto params = loc.params();
    std::vector<AdamState> adam;
    LrSchedule sched{cfg.lr_l};

    TrainResult result;
    LogSink sink(cfg.run_dir, result.logs);
    double best_val = 0.0;
    bool has_best = false;
    std::vector<double> best_params;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto batches = epoch_batches(samples, train_idx, cfg, epoch, on_distorted);
        double train_acc = 0.0;
        int total = 0;
        for (Batch& b : batches) {
            const Tensor& input = on_distorted ? b.distorted : b.plain;
            const Tensor p = loc.forward(input, true);
            double lval = 0.0;
            const Tensor g = losses::loss_loc_grad(p, b.mask, cfg.weights, &lval);
            nets::zero_grads(params);
            loc.backward(g);
            optimizer_step(params, sched.lr, adam, cfg.clip_norm);
            train_acc += lval * b.n;
            total += b.n;
        }
        const double train_loss = train_acc / total;
        const double val_loss =
            val.empty() ? train_loss
                        : validation_loss_localizer(loc, nullptr, val, on_distorted, cfg.weights);
        sched.step(val_loss);
        if (!has_best || val_loss < best_val) {
            best_val = val_loss;
            has_best = true;
            best_params = snapshot(params);
            result.best_epoch = epoch;
        }
        EpochLog log;
        log.epoch = epoch;
        log.mode = phase;
        log.updated = {"L"};
        log.train_losses = {{"loss_l", train_loss}};
        log.val_losses = {{"loss_l", val_loss}};
        log.lrs = {{"lr_l", sched.lr}};
        log.digests = {{"L", nets::parameter_digest(params)}};
        sink.push(std::move(log));
    }
    restore_snapshot(params, best_params);
    result.checkpoint =
        nets::make_checkpoint(loc, nets::Provenance{phase, result.best_epoch, cfg.seed});
    return result;
}

RelocResult train_reloc_impl(const nets::Checkpoint& m_p, const DatasetManifest& manifest,
                             const TrainConfig& cfg, bool joint) {
    cfg.validate();
    const char* phase = joint ? "reloc_joint" : "reloc_alternate";

    nets::LocalizationNet loc = nets::localization_from_checkpoint(m_p);
    nets::RestorationNet res(cfg.restoration, Rng::derive(cfg.seed, 'R'));
    nets::Discriminator disc(cfg.discriminator, Rng::derive(cfg.seed, 'D'));

    std::vector<LoadedSample> samples = load_all(manifest);
    std::vector<size_t> train_idx, val_idx;
    carve_validation(samples.size(), cfg.val_frac, cfg.seed, train_idx, val_idx);
    if (train_idx.empty()) throw std::invalid_argument("training: no samples left after validation carve");
    std::vector<Batch> val = validation_batches(samples, val_idx, cfg, true);

    auto params_l = loc.params();
    auto params_r = res.params();
    auto params_d = disc.params();
    std::vector<AdamState> adam_l, adam_r, adam_d;
    LrSchedule sched_l{cfg.lr_l}, sched_r{cfg.lr_r}, sched_d{cfg.lr_d};

    RelocResult result;
    LogSink sink(cfg.run_dir, result.logs);
    double best_val = 0.0;
    bool has_best = false;
    std::vector<double> best_l, best_r, best_d;
    const losses::LossWeights& w = cfg.weights;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool r_epoch = joint || epoch % 2 != 0;
        const bool l_epoch = joint || epoch % 2 == 0;
        auto batches = epoch_batches(samples, train_idx, cfg, epoch, true);

        double acc_d = 0.0, acc_r = 0.0, acc_mae = 0.0, acc_gen = 0.0, acc_rloc = 0.0, acc_l = 0.0;
        int total = 0;
        for (Batch& b : batches) {
            total += b.n;
            if (r_epoch) {
                // Discriminator step on (plain, restored) with the current restorer.
                const Tensor restored = res.forward(b.distorted, true);
                const std::vector<double> d_all = disc.forward(concat_batch(b.plain, restored), true);
                const std::vector<double> d_plain(d_all.begin(), d_all.begin() + b.n);
                const std::vector<double> d_rest(d_all.begin() + b.n, d_all.end());
                std::vector<double> g_plain, g_rest;
                double ld = 0.0;
                losses::loss_disc_grad(d_plain, d_rest, g_plain, g_rest, w.eps_log, &ld);
                std::vector<double> g_all = g_plain;
                g_all.insert(g_all.end(), g_rest.begin(), g_rest.end());
                nets::zero_grads(params_d);
                disc.backward(g_all);
                optimizer_step(params_d, sched_d.lr, adam_d, cfg.clip_norm);
                acc_d += ld * b.n;

                // Restorer step against the just-updated discriminator; the
                // frozen localizer supplies the forensic term of the loss.
                double mae = 0.0, lgen = 0.0, lloc = 0.0;
                Tensor g_restored = losses::loss_mae_grad(b.plain, restored, &mae);
                for (double& e : g_restored.v) e *= w.lambda2;
                if (w.lambda3 > 0.0) {
                    const std::vector<double> d2 = disc.forward(restored, true);
                    const std::vector<double> g_gen = losses::loss_gen_grad(d2, w.eps_log, &lgen);
                    const Tensor g_from_d = disc.backward(g_gen);
                    for (size_t t = 0; t < g_restored.size(); ++t)
                        g_restored.v[t] += w.lambda3 * g_from_d.v[t];
                    nets::zero_grads(params_d);  // D is frozen in this step
                }
                if (w.lambda4 > 0.0) {
                    const Tensor p = loc.forward(restored, true);
                    const Tensor g_loc = losses::loss_loc_grad(p, b.mask, w, &lloc);
                    const Tensor g_from_l = loc.backward(g_loc);
                    for (size_t t = 0; t < g_restored.size(); ++t)
                        g_restored.v[t] += w.lambda4 * g_from_l.v[t];
                    nets::zero_grads(params_l);  // L is frozen in this step
                }
                nets::zero_grads(params_r);
                res.backward(g_restored);
                optimizer_step(params_r, sched_r.lr, adam_r, cfg.clip_norm);
                acc_mae += mae * b.n;
                acc_gen += lgen * b.n;
                acc_rloc += lloc * b.n;
                acc_r += (w.lambda2 * mae + w.lambda3 * lgen + w.lambda4 * lloc) * b.n;
            }
            if (l_epoch) {
                const Tensor restored = res.forward(b.distorted, false);
                const Tensor p = loc.forward(restored, true);
                double ll = 0.0;
                const Tensor g = losses::loss_loc_grad(p, b.mask, w, &ll);
                nets::zero_grads(params_l);
                loc.backward(g);
                optimizer_step(params_l, sched_l.lr, adam_l, cfg.clip_norm);
                acc_l += ll * b.n;
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.mode = phase;
        if (r_epoch) {
            log.updated.push_back("D");
            log.updated.push_back("R");
            log.train_losses["loss_d"] = acc_d / total;
            log.train_losses["loss_r"] = acc_r / total;
            log.train_losses["loss_mae"] = acc_mae / total;
            log.train_losses["loss_gen"] = acc_gen / total;
            log.train_losses["loss_r_loc"] = acc_rloc / total;
            const double val_r = val.empty() ? acc_r / total
                                             : validation_loss_restorer(res, loc, val, w);
            log.val_losses["loss_r"] = val_r;
            sched_r.step(val_r);
            sched_d.step(val_r);
        }
        if (l_epoch) {
            log.updated.push_back("L");
            log.train_losses["loss_l"] = acc_l / total;
            const double val_l = val.empty()
                                     ? acc_l / total
                                     : validation_loss_localizer(loc, &res, val, true, w);
            log.val_losses["loss_l"] = val_l;
            sched_l.step(val_l);
            if (!has_best || val_l < best_val) {
                best_val = val_l;
                has_best = true;
                best_l = snapshot(params_l);
                best_r = snapshot(params_r);
                best_d = snapshot(params_d);
                result.best_epoch = epoch;
            }
        }
        log.lrs = {{"lr_r", sched_r.lr}, {"lr_d", sched_d.lr}, {"lr_l", sched_l.lr}};
        log.digests = {{"R", nets::parameter_digest(params_r)},
                       {"D", nets::parameter_digest(params_d)},
                       {"L", nets::parameter_digest(params_l)}};
        sink.push(std::move(log));
    }

    if (has_best) {
        restore_snapshot(params_l, best_l);
        restore_snapshot(params_r, best_r);
        restore_snapshot(params_d, best_d);
    } else {
        result.best_epoch = cfg.epochs;
    }
    const nets::Provenance prov{phase, result.best_epoch, cfg.seed};
    result.restoration = nets::make_checkpoint(res, prov);
    result.localization = nets::make_checkpoint(loc, prov);
    result.discriminator = nets::make_checkpoint(disc, prov);
    return result;
}

}  // namespace

TrainResult pretrain_plain(const DatasetManifest& manifest, const TrainConfig& config) {
    if (config.mode != TrainMode::PretrainPlain)
        throw std::invalid_argument("pretrain_plain: config mode mismatch");
    nets::LocalizationNet loc(config.localization, Rng::derive(config.seed, 'L'));
    return train_localizer(loc, manifest, config, /*on_distorted=*/false, "pretrain_plain");
}

TrainResult finetune_distorted(const nets::Checkpoint& m_p, const DatasetManifest& manifest,
                               const TrainConfig& config) {
    if (config.mode != TrainMode::FinetuneDistorted)
        throw std::invalid_argument("finetune_distorted: config mode mismatch");
    nets::LocalizationNet loc = nets::localization_from_checkpoint(m_p);
    return train_localizer(loc, manifest, config, /*on_distorted=*/true, "finetune_distorted");
}

RelocResult train_reloc(const nets::Checkpoint& m_p, const DatasetManifest& manifest,
                        const TrainConfig& config) {
    if (config.mode != TrainMode::RelocAlternate)
        throw std::invalid_argument("train_reloc: config mode mismatch");
    return train_reloc_impl(m_p, manifest, config, /*joint=*/false);
}

RelocResult train_joint(const nets::Checkpoint& m_p, const DatasetManifest& manifest,
                        const TrainConfig& config) {
    if (config.mode != TrainMode::RelocJoint)
        throw std::invalid_argument("train_joint: config mode mismatch");
    return train_reloc_impl(m_p, manifest, config, /*joint=*/true);
}

}  // namespace reloc::training
