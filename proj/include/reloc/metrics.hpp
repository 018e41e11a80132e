#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reloc/image.hpp"
#include "reloc/nets.hpp"
#include "reloc/rng.hpp"

namespace reloc::metrics {

struct ConfusionCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion(const Mask& pred, const Mask& gt);

// F1 = 2TP/(2TP+FP+FN), IOU = TP/(TP+FP+FN); both 0 when the denominator is 0.
double f1(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);

// Rank-statistic AUC with ties counted 0.5; nullopt when gt is single-class.
std::optional<double> auc(const ProbabilityMap& prob, const Mask& gt);

struct PerImage {
    std::string id;
    double f1 = 0.0, iou = 0.0;
    std::optional<double> auc;
};

struct MetricsReport {
    std::string situation;
    std::vector<PerImage> per_image;
    double mean_f1 = 0.0, mean_iou = 0.0;
    std::optional<double> mean_auc;
    int auc_excluded = 0;
};

// Arithmetic means over per-image records; AUC-degenerate images are excluded
// from the AUC mean only.
MetricsReport aggregate(const std::string& situation, const std::vector<PerImage>& per_image);

void write_report_csv(const MetricsReport& report, const std::filesystem::path& path);
void write_report_json(const MetricsReport& report, const std::filesystem::path& path);

// Sliced approximation of the earth mover's distance: mean over fixed random
// directions of the exact 1-D transport distance between the projections,
// scaled by 1/E|theta_1| for the feature dimension so a pure translation of
// the point set measures its own length.
double feature_emd(const std::vector<std::vector<double>>& feats_a,
                   const std::vector<std::vector<double>>& feats_b, int n_directions = 128,
                   uint64_t direction_seed = 9001);

// Deterministic variance-maximizing (principal-component) projection to 2-D.
std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& feats);

struct FeatureAnalysis {
    double emd = 0.0;
    int n_original = 0, n_tampered = 0;
    std::vector<std::array<double, 2>> points_original;
    std::vector<std::array<double, 2>> points_tampered;
};

// Samples n_per_class pixels per class across the given (image, mask) pairs,
// extracts encoder features, and reports the class separation.
FeatureAnalysis analyze_separability(nets::LocalizationNet& model,
                                     const std::vector<std::pair<const Image*, const Mask*>>& samples,
                                     int n_per_class, Rng& rng);

void write_scatter_csv(const FeatureAnalysis& fa, const std::filesystem::path& path);

}  // namespace reloc::metrics
