#include <CLI11.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "reloc/dataio.hpp"
#include "reloc/imageio.hpp"
#include "reloc/inference.hpp"
#include "reloc/metrics.hpp"
#include "reloc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reloc;

namespace {

// Configuration problems discovered after argument parsing still exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exclusive .lock file guarding a command's output directory.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw std::runtime_error("output directory is locked by another command (" +
                                     path_.string() + " exists)");
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

// .partial marker: present while outputs are being written, removed on success.
class PartialMarker {
public:
    explicit PartialMarker(const fs::path& dir) : path_(dir / ".partial") {
        fs::create_directories(dir);
        std::ofstream(path_) << ::getpid() << "\n";
    }
    // an aborted command leaves the marker behind
    void done() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
};

struct CommonNetArgs {
    int loc_width = 16, loc_depth = 3;
    int res_width = 16, res_depth = 3;
    int disc_width = 16, disc_stages = 3;
};

nets::UNetConfig loc_config(const CommonNetArgs& a) {
    return {.in_ch = 3, .out_ch = 1, .base_width = a.loc_width, .depth = a.loc_depth,
            .residual = false};
}
nets::UNetConfig res_config(const CommonNetArgs& a) {
    return {.in_ch = 3, .out_ch = 3, .base_width = a.res_width, .depth = a.res_depth,
            .residual = true};
}

std::string situation_tag(const std::string& s) {
    if (s == "mp-plain") return "M^P{I^P}";
    if (s == "mp-distorted") return "M^P{I^D}";
    if (s == "mdp-distorted") return "M^{D|P}{I^D}";
    if (s == "reloc") return "M^ReLoc{I^D}";
    if (s == "compose") return "M^ReLoc_R+M^P{I^D}";
    throw UsageError("unknown situation '" + s +
                     "' (expected mp-plain, mp-distorted, mdp-distorted, reloc, compose)");
}

std::string situation_file_stem(const std::string& s) {
    std::string stem = s;
    for (char& c : stem)
        if (c == '-') c = '_';
    return stem;
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
    int n = 0;
    int size = 96;
    int size_jitter = 0;
    uint64_t seed = 0;
    fs::path out;
    double train_frac = 0.75;
};

void run_synth(const SynthArgs& a) {
    DirLock lock(a.out);
    PartialMarker marker(a.out);
    auto manifest = dataio::synth_tamper_dataset(a.n, a.size, a.seed, a.out, a.size_jitter);
    if (a.train_frac > 0.0 && manifest.size() >= 2) {
        const auto [train, test] = dataio::split_dataset(manifest, a.train_frac, a.seed);
        dataio::save_index(a.out, {&train, &test});
        std::cout << "wrote " << manifest.size() << " pairs to " << a.out << " (train "
                  << train.size() << " / test " << test.size() << ")\n";
    } else {
        dataio::save_index(a.out, {&manifest});
        std::cout << "wrote " << manifest.size() << " pairs to " << a.out << "\n";
    }
    marker.done();
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
    std::string mode;
    fs::path data;
    std::string split = "train";
    fs::path run_dir;
    fs::path init;
    int epochs = 10, batch = 8, block = 128, blocks_per_image = 1;
    double lr_r = 1e-4, lr_d = 1e-4, lr_l = 1e-4;
    double lambda1 = 0.2, lambda2 = 100.0, lambda3 = 1.0, lambda4 = 0.05;
    std::string qf = "fixed:75";
    uint64_t seed = 0;
    double val_frac = 0.1, clip_norm = 5.0;
    CommonNetArgs nets;
};

void run_train(const TrainArgs& a) {
    const training::TrainMode mode = training::parse_mode(a.mode);
    training::TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.block = a.block;
    cfg.blocks_per_image = a.blocks_per_image;
    cfg.lr_r = a.lr_r;
    cfg.lr_d = a.lr_d;
    cfg.lr_l = a.lr_l;
    cfg.weights.lambda1 = a.lambda1;
    cfg.weights.lambda2 = a.lambda2;
    cfg.weights.lambda3 = a.lambda3;
    cfg.weights.lambda4 = a.lambda4;
    cfg.degradation = dataio::DegradationSpec::parse(a.qf);
    cfg.seed = a.seed;
    cfg.val_frac = a.val_frac;
    cfg.clip_norm = a.clip_norm;
    cfg.localization = loc_config(a.nets);
    cfg.restoration = res_config(a.nets);
    cfg.discriminator = {.in_ch = 3, .base_width = a.nets.disc_width,
                         .n_stages = a.nets.disc_stages, .input_size = a.block};
    cfg.run_dir = a.run_dir;

    const bool needs_init = mode != training::TrainMode::PretrainPlain;
    if (needs_init && a.init.empty())
        throw UsageError(std::string(training::mode_name(mode)) +
                         " requires --init with the pretrained M^P localization checkpoint");

    const auto manifest = dataio::load_dataset(a.data, a.split);
    DirLock lock(a.run_dir);
    PartialMarker marker(a.run_dir);
    const fs::path ckpt_dir = a.run_dir / "checkpoints";
    fs::create_directories(ckpt_dir);

    switch (mode) {
        case training::TrainMode::PretrainPlain: {
            const auto result = training::pretrain_plain(manifest, cfg);
            nets::save_checkpoint(result.checkpoint, ckpt_dir / "mp.ckpt");
            std::cout << "M^P ready: best epoch " << result.best_epoch << ", checkpoint "
                      << (ckpt_dir / "mp.ckpt") << "\n";
            break;
        }
        case training::TrainMode::FinetuneDistorted: {
            const auto mp = nets::load_checkpoint(a.init);
            const auto result = training::finetune_distorted(mp, manifest, cfg);
            nets::save_checkpoint(result.checkpoint, ckpt_dir / "mdp.ckpt");
            std::cout << "M^{D|P} ready: best epoch " << result.best_epoch << ", checkpoint "
                      << (ckpt_dir / "mdp.ckpt") << "\n";
            break;
        }
        case training::TrainMode::RelocAlternate:
        case training::TrainMode::RelocJoint: {
            const auto mp = nets::load_checkpoint(a.init);
            const auto result = mode == training::TrainMode::RelocAlternate
                                    ? training::train_reloc(mp, manifest, cfg)
                                    : training::train_joint(mp, manifest, cfg);
            nets::save_checkpoint(result.restoration, ckpt_dir / "reloc_r.ckpt");
            nets::save_checkpoint(result.localization, ckpt_dir / "reloc_l.ckpt");
            nets::save_checkpoint(result.discriminator, ckpt_dir / "reloc_d.ckpt");
            std::cout << "M^ReLoc ready: best epoch " << result.best_epoch
                      << ", checkpoints under " << ckpt_dir << "\n";
            break;
        }
    }
    marker.done();
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
    std::string situation;
    fs::path data;
    std::string split = "test";
    fs::path l_ckpt, r_ckpt;
    std::vector<int> qfs{75};
    int window = 512, stride = 512;
    double thresh = 0.5;
    fs::path out = "eval";
    bool save_maps = false;
};

void run_eval(const EvalArgs& a) {
    const std::string tag = situation_tag(a.situation);
    const bool uses_restorer = a.situation == "reloc" || a.situation == "compose";
    if (uses_restorer && a.r_ckpt.empty())
        throw UsageError("situation '" + a.situation + "' requires --r-ckpt");

    const auto manifest = dataio::load_dataset(a.data, a.split);
    const auto l_ckpt = nets::load_checkpoint(a.l_ckpt);
    std::optional<nets::Checkpoint> r_ckpt;
    if (uses_restorer) r_ckpt = nets::load_checkpoint(a.r_ckpt);
    const inference::WindowSpec spec{a.window, a.stride};

    DirLock lock(a.out);
    PartialMarker marker(a.out);

    const std::vector<int> qfs = a.situation == "mp-plain" ? std::vector<int>{0} : a.qfs;
    for (int qf : qfs) {
        std::vector<metrics::PerImage> per_image;
        for (const auto& ref : manifest.entries) {
            const dataio::Sample sample = dataio::load_sample(ref);
            const Image input = qf == 0 ? sample.plain : dataio::jpeg_distort(sample.plain, qf);
            const inference::PredictionResult pred =
                uses_restorer ? inference::reloc_pipeline(*r_ckpt, l_ckpt, input, spec, a.thresh)
                              : inference::localize_pipeline(l_ckpt, input, spec, a.thresh);
            metrics::PerImage pi;
            pi.id = sample.id;
            const auto counts = metrics::confusion(pred.mask, sample.mask);
            pi.f1 = metrics::f1(counts);
            pi.iou = metrics::iou(counts);
            pi.auc = metrics::auc(pred.prob, sample.mask);
            per_image.push_back(std::move(pi));

            if (a.save_maps) {
                const fs::path maps = a.out / ("maps_qf" + std::to_string(qf));
                fs::create_directories(maps);
                ProbabilityMap prob = pred.prob;
                imageio::write_png_gray16(maps / (sample.id + "_prob.png"), prob);
                imageio::write_png_mask(maps / (sample.id + "_mask.png"), pred.mask);
                if (pred.restored)
                    imageio::write_png_rgb(maps / (sample.id + "_restored.png"), *pred.restored);
                json side{{"id", sample.id}, {"situation", tag},     {"qf", qf},
                          {"seconds", pred.seconds}, {"threshold", a.thresh}};
                std::ofstream(maps / (sample.id + ".json")) << side.dump(2) << "\n";
            }
        }
        const auto report = metrics::aggregate(tag, per_image);
        const std::string stem = situation_file_stem(a.situation) +
                                 (qf == 0 ? std::string("_plain") : "_qf" + std::to_string(qf));
        metrics::write_report_csv(report, a.out / (stem + ".csv"));
        metrics::write_report_json(report, a.out / (stem + ".json"));
        std::cout << tag << (qf ? " @ QF" + std::to_string(qf) : "") << ": mean F1 "
                  << report.mean_f1 << ", IOU " << report.mean_iou;
        if (report.mean_auc) std::cout << ", AUC " << *report.mean_auc;
        std::cout << "  (" << per_image.size() << " images, reports in " << a.out << ")\n";
    }
    marker.done();
}

// -------------------------------------------------------------- analyze ----

struct AnalyzeArgs {
    std::string situation = "mp-distorted";
    fs::path data;
    std::string split = "test";
    fs::path l_ckpt, r_ckpt;
    int n = 1000;
    int qf = 75;
    int window = 512, stride = 512;
    uint64_t seed = 1234;
    fs::path out = "analysis";
};

void run_analyze(const AnalyzeArgs& a) {
    const std::string tag = situation_tag(a.situation);
    const bool uses_restorer = a.situation == "reloc" || a.situation == "compose";
    if (uses_restorer && a.r_ckpt.empty())
        throw UsageError("situation '" + a.situation + "' requires --r-ckpt");

    const auto manifest = dataio::load_dataset(a.data, a.split);
    nets::LocalizationNet model =
        nets::localization_from_checkpoint(nets::load_checkpoint(a.l_ckpt));
    std::optional<nets::RestorationNet> restorer;
    if (uses_restorer)
        restorer = nets::restoration_from_checkpoint(nets::load_checkpoint(a.r_ckpt));

    std::vector<dataio::Sample> samples;
    std::vector<Image> inputs;
    samples.reserve(manifest.size());
    for (const auto& ref : manifest.entries) {
        samples.push_back(dataio::load_sample(ref));
        Image input = a.situation == "mp-plain" ? samples.back().plain
                                                : dataio::jpeg_distort(samples.back().plain, a.qf);
        if (restorer)
            input = inference::sliding_window_restore(*restorer, input, {a.window, a.stride});
        inputs.push_back(std::move(input));
    }
    std::vector<std::pair<const Image*, const Mask*>> pairs;
    for (size_t i = 0; i < samples.size(); ++i) pairs.emplace_back(&inputs[i], &samples[i].mask);

    DirLock lock(a.out);
    PartialMarker marker(a.out);
    Rng rng(a.seed);
    const auto fa = metrics::analyze_separability(model, pairs, a.n, rng);

    json j{{"situation", tag},
           {"emd", fa.emd},
           {"n_original", fa.n_original},
           {"n_tampered", fa.n_tampered},
           {"qf", a.qf},
           {"seed", a.seed}};
    std::ofstream(a.out / "emd.json") << j.dump(2) << "\n";
    metrics::write_scatter_csv(fa, a.out / "scatter.csv");
    std::cout << tag << ": EMD " << fa.emd << " over " << fa.n_original << "+" << fa.n_tampered
              << " pixels (reports in " << a.out << ")\n";
    marker.done();
}

// -------------------------------------------------------------- restore ----

struct RestoreArgs {
    fs::path r_ckpt;
    fs::path in;
    fs::path out = "restored";
    int window = 512, stride = 512;
};

Image load_any_image(const fs::path& p, ImageRole role) {
    const std::string ext = p.extension().string();
    if (ext == ".png" || ext == ".PNG") return imageio::read_png_rgb(p, role);
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".JPG") return imageio::read_jpeg(p, role);
    throw std::runtime_error("unsupported image format: " + p.string());
}

void run_restore(const RestoreArgs& a) {
    nets::RestorationNet restorer =
        nets::restoration_from_checkpoint(nets::load_checkpoint(a.r_ckpt));
    std::vector<fs::path> files;
    if (fs::is_directory(a.in)) {
        for (const auto& e : fs::directory_iterator(a.in)) {
            const std::string ext = e.path().extension().string();
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw std::runtime_error("no images found in " + a.in.string());
    } else if (fs::exists(a.in)) {
        files.push_back(a.in);
    } else {
        throw std::runtime_error("input not found: " + a.in.string());
    }

    DirLock lock(a.out);
    PartialMarker marker(a.out);
    for (const fs::path& f : files) {
        const Image input = load_any_image(f, ImageRole::Distorted);
        const Image restored =
            inference::sliding_window_restore(restorer, input, {a.window, a.stride});
        const fs::path out_path = a.out / (f.stem().string() + ".png");
        imageio::write_png_rgb(out_path, restored);
        std::cout << f << " -> " << out_path << "\n";
    }
    marker.done();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ReLoc: restoration-assisted image tampering localization"};
    app.require_subcommand(1);
    app.set_config("--config", "", "options file (INI sections, one per subcommand)");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic tamper corpus");
    synth_cmd->add_option("--n", synth.n, "number of (plain, mask) pairs")->required();
    synth_cmd->add_option("--size", synth.size, "image size in pixels (>= 64)");
    synth_cmd->add_option("--size-jitter", synth.size_jitter,
                          "draw extents uniformly from [size-jitter, size]");
    synth_cmd->add_option("--seed", synth.seed, "rng seed")->required();
    synth_cmd->add_option("--out", synth.out, "output dataset root")->required();
    synth_cmd->add_option("--train-frac", synth.train_frac,
                          "train fraction for the split index (0 disables splitting)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "run one training regime");
    train_cmd
        ->add_option("--mode", train.mode,
                     "pretrain_plain | finetune_distorted | reloc_alternate | reloc_joint")
        ->required();
    train_cmd->add_option("--data", train.data, "dataset root")->required();
    train_cmd->add_option("--split", train.split, "manifest split to train on");
    train_cmd->add_option("--run-dir", train.run_dir, "run directory for logs and checkpoints")
        ->envname("RELOC_RUN_DIR")
        ->required();
    train_cmd->add_option("--init", train.init, "M^P checkpoint (finetune/reloc modes)");
    train_cmd->add_option("--epochs", train.epochs, "training epochs");
    train_cmd->add_option("--batch", train.batch, "minibatch size in blocks");
    train_cmd->add_option("--block", train.block, "training block size");
    train_cmd->add_option("--blocks-per-image", train.blocks_per_image, "crops per image per epoch");
    train_cmd->add_option("--lr-r", train.lr_r, "restoration learning rate");
    train_cmd->add_option("--lr-d", train.lr_d, "discriminator learning rate");
    train_cmd->add_option("--lr-l", train.lr_l, "localization learning rate");
    train_cmd->add_option("--lambda1", train.lambda1, "CE weight inside the localization loss");
    train_cmd->add_option("--lambda2", train.lambda2, "MAE weight");
    train_cmd->add_option("--lambda3", train.lambda3, "adversarial weight");
    train_cmd->add_option("--lambda4", train.lambda4, "localization weight in the restoration loss");
    train_cmd->add_option("--qf", train.qf, "degradation spec: fixed:Q or uniform:LO:HI");
    train_cmd->add_option("--seed", train.seed, "rng seed")->required();
    train_cmd->add_option("--val-frac", train.val_frac, "validation fraction carved from train");
    train_cmd->add_option("--clip-norm", train.clip_norm, "global gradient-norm clip");
    train_cmd->add_option("--loc-width", train.nets.loc_width, "localization base width");
    train_cmd->add_option("--loc-depth", train.nets.loc_depth, "localization depth");
    train_cmd->add_option("--res-width", train.nets.res_width, "restoration base width");
    train_cmd->add_option("--res-depth", train.nets.res_depth, "restoration depth");
    train_cmd->add_option("--disc-width", train.nets.disc_width, "discriminator base width");
    train_cmd->add_option("--disc-stages", train.nets.disc_stages, "discriminator strided stages");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a training/testing situation");
    eval_cmd->add_option("--situation", eval.situation,
                         "mp-plain | mp-distorted | mdp-distorted | reloc | compose")
        ->required();
    eval_cmd->add_option("--data", eval.data, "dataset root")->required();
    eval_cmd->add_option("--split", eval.split, "manifest split to evaluate");
    eval_cmd->add_option("--l-ckpt", eval.l_ckpt, "localization checkpoint")->required();
    eval_cmd->add_option("--r-ckpt", eval.r_ckpt, "restoration checkpoint (reloc/compose)");
    eval_cmd->add_option("--qf", eval.qfs, "JPEG quality factors to evaluate")->delimiter(',');
    eval_cmd->add_option("--window", eval.window, "sliding window size");
    eval_cmd->add_option("--stride", eval.stride, "sliding window stride");
    eval_cmd->add_option("--threshold", eval.thresh, "binarization threshold");
    eval_cmd->add_option("--out", eval.out, "report directory");
    eval_cmd->add_flag("--save-maps", eval.save_maps,
                       "write per-image probability/mask/restored PNGs with JSON sidecars");

    AnalyzeArgs analyze;
    auto* analyze_cmd =
        app.add_subcommand("analyze", "feature-separability analysis (EMD + scatter)");
    analyze_cmd->add_option("--situation", analyze.situation,
                            "mp-plain | mp-distorted | mdp-distorted | reloc");
    analyze_cmd->add_option("--data", analyze.data, "dataset root")->required();
    analyze_cmd->add_option("--split", analyze.split, "manifest split");
    analyze_cmd->add_option("--l-ckpt", analyze.l_ckpt, "localization checkpoint")->required();
    analyze_cmd->add_option("--r-ckpt", analyze.r_ckpt, "restoration checkpoint (reloc)");
    analyze_cmd->add_option("--n", analyze.n, "pixels per class")->check(CLI::PositiveNumber);
    analyze_cmd->add_option("--qf", analyze.qf, "JPEG quality factor for distorted inputs");
    analyze_cmd->add_option("--window", analyze.window, "restoration window");
    analyze_cmd->add_option("--stride", analyze.stride, "restoration stride");
    analyze_cmd->add_option("--seed", analyze.seed, "pixel-sampling seed");
    analyze_cmd->add_option("--out", analyze.out, "output directory");

    RestoreArgs restore;
    auto* restore_cmd = app.add_subcommand("restore", "restore distorted images to PNG");
    restore_cmd->add_option("--r-ckpt", restore.r_ckpt, "restoration checkpoint")->required();
    restore_cmd->add_option("--in", restore.in, "input image or directory")->required();
    restore_cmd->add_option("--out", restore.out, "output directory");
    restore_cmd->add_option("--window", restore.window, "sliding window size");
    restore_cmd->add_option("--stride", restore.stride, "sliding window stride");

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) run_synth(synth);
        if (train_cmd->parsed()) run_train(train);
        if (eval_cmd->parsed()) run_eval(eval);
        if (analyze_cmd->parsed()) run_analyze(analyze);
        if (restore_cmd->parsed()) run_restore(restore);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
