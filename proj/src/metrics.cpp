#include "reloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace reloc::metrics {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion: mask shapes differ");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double f1(const ConfusionCounts& c) {
    const long long den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double iou(const ConfusionCounts& c) {
    const long long den = c.tp + c.fp + c.fn;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

std::optional<double> auc(const ProbabilityMap& prob, const Mask& gt) {
    if (prob.h != gt.h || prob.w != gt.w)
        throw std::invalid_argument("auc: shapes differ");
    const size_t n = prob.v.size();
    size_t n_pos = 0;
    for (uint8_t g : gt.v) n_pos += g ? 1 : 0;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    // Mann-Whitney via average ranks (ties contribute 0.5 per pair).
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return prob.v[a] < prob.v[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && prob.v[order[j]] == prob.v[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (gt.v[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport aggregate(const std::string& situation, const std::vector<PerImage>& per_image) {
    if (per_image.empty()) throw std::invalid_argument("aggregate: empty per-image list");
    MetricsReport r;
    r.situation = situation;
    r.per_image = per_image;
    double auc_acc = 0.0;
    int auc_n = 0;
    for (const PerImage& p : per_image) {
        r.mean_f1 += p.f1;
        r.mean_iou += p.iou;
        if (p.auc) {
            auc_acc += *p.auc;
            ++auc_n;
        } else {
            ++r.auc_excluded;
        }
    }
    r.mean_f1 /= static_cast<double>(per_image.size());
    r.mean_iou /= static_cast<double>(per_image.size());
    if (auc_n > 0) r.mean_auc = auc_acc / auc_n;
    return r;
}

void write_report_csv(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id,situation,F1,IOU,AUC\n";
    for (const PerImage& p : report.per_image) {
        out << p.id << "," << report.situation << "," << p.f1 << "," << p.iou << ",";
        if (p.auc) out << *p.auc;
        out << "\n";
    }
    out << "mean," << report.situation << "," << report.mean_f1 << "," << report.mean_iou << ",";
    if (report.mean_auc) out << *report.mean_auc;
    out << "\n";
}

void write_report_json(const MetricsReport& report, const std::filesystem::path& path) {
    json per = json::array();
    for (const PerImage& p : report.per_image) {
        json j{{"id", p.id}, {"f1", p.f1}, {"iou", p.iou}};
        if (p.auc) j["auc"] = *p.auc;
        per.push_back(std::move(j));
    }
    json j{{"situation", report.situation},
           {"mean_f1", report.mean_f1},
           {"mean_iou", report.mean_iou},
           {"auc_excluded", report.auc_excluded},
           {"per_image", std::move(per)}};
    if (report.mean_auc) j["mean_auc"] = *report.mean_auc;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

namespace {

// Exact 1-D transport distance between two empirical distributions (possibly
// of different sizes): the area between their CDFs.
double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double wa = 1.0 / static_cast<double>(a.size());
    const double wb = 1.0 / static_cast<double>(b.size());
    size_t ia = 0, ib = 0;
    double cdf_a = 0.0, cdf_b = 0.0, dist = 0.0;
    double prev = std::min(a[0], b[0]);
    while (ia < a.size() || ib < b.size()) {
        const double xa = ia < a.size() ? a[ia] : std::numeric_limits<double>::infinity();
        const double xb = ib < b.size() ? b[ib] : std::numeric_limits<double>::infinity();
        const double x = std::min(xa, xb);
        dist += std::abs(cdf_a - cdf_b) * (x - prev);
        prev = x;
        while (ia < a.size() && a[ia] == x) {
            cdf_a += wa;
            ++ia;
        }
        while (ib < b.size() && b[ib] == x) {
            cdf_b += wb;
            ++ib;
        }
    }
    return dist;
}

// E|theta_1| for theta uniform on S^{d-1}: Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2)).
double mean_abs_first_coord(int d) {
    return std::exp(std::lgamma(d / 2.0) - std::lgamma((d + 1) / 2.0)) / std::sqrt(M_PI);
}

}  // namespace

double feature_emd(const std::vector<std::vector<double>>& feats_a,
                   const std::vector<std::vector<double>>& feats_b, int n_directions,
                   uint64_t direction_seed) {
    if (feats_a.empty() || feats_b.empty())
        throw std::invalid_argument("feature_emd: both sets must be non-empty");
    const size_t dim = feats_a[0].size();
    for (const auto& v : feats_a)
        if (v.size() != dim) throw std::invalid_argument("feature_emd: ragged feature vectors");
    for (const auto& v : feats_b)
        if (v.size() != dim) throw std::invalid_argument("feature_emd: dimension mismatch");
    if (n_directions < 1) throw std::invalid_argument("feature_emd: need at least one direction");

    Rng rng(Rng::derive(direction_seed, 0xE3D));
    double acc = 0.0;
    std::vector<double> dir(dim), pa(feats_a.size()), pb(feats_b.size());
    for (int k = 0; k < n_directions; ++k) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& e : dir) {
                e = rng.normal();
                norm += e * e;
            }
        } while (norm < 1e-12);
        norm = std::sqrt(norm);
        for (double& e : dir) e /= norm;

        for (size_t i = 0; i < feats_a.size(); ++i)
            pa[i] = std::inner_product(dir.begin(), dir.end(), feats_a[i].begin(), 0.0);
        for (size_t i = 0; i < feats_b.size(); ++i)
            pb[i] = std::inner_product(dir.begin(), dir.end(), feats_b[i].begin(), 0.0);
        acc += wasserstein_1d(pa, pb);
    }
    return acc / n_directions / mean_abs_first_coord(static_cast<int>(dim));
}

namespace {

// Cyclic Jacobi eigensolver for small symmetric matrices; returns
// eigenvalues (descending) and matching eigenvector columns.
void eig_sym_jacobi(std::vector<std::vector<double>> a, std::vector<double>& eigvals,
                    std::vector<std::vector<double>>& eigvecs) {
    const size_t n = a.size();
    eigvecs.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) eigvecs[i][i] = 1.0;

    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs[k][p], vkq = eigvecs[k][q];
                    eigvecs[k][p] = c * vkp - s * vkq;
                    eigvecs[k][q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(n);
    for (size_t i = 0; i < n; ++i) eigvals[i] = a[i][i];

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return eigvals[x] > eigvals[y]; });
    std::vector<double> ev(n);
    std::vector<std::vector<double>> vecs(n, std::vector<double>(n));
    for (size_t j = 0; j < n; ++j) {
        ev[j] = eigvals[order[j]];
        for (size_t i = 0; i < n; ++i) vecs[i][j] = eigvecs[i][order[j]];
    }
    eigvals = std::move(ev);
    eigvecs = std::move(vecs);
}

}  // namespace

std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& feats) {
    if (feats.size() < 3) throw std::invalid_argument("project_2d: need at least 3 vectors");
    const size_t n = feats.size();
    const size_t d = feats[0].size();
    for (const auto& v : feats)
        if (v.size() != d) throw std::invalid_argument("project_2d: ragged feature vectors");

    std::vector<double> mean(d, 0.0);
    for (const auto& v : feats)
        for (size_t j = 0; j < d; ++j) mean[j] += v[j];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<std::array<double, 2>> out(n);
    if (d == 1) {
        for (size_t i = 0; i < n; ++i) out[i] = {feats[i][0] - mean[0], 0.0};
        return out;
    }

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& v : feats)
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p; q < d; ++q) cov[p][q] += (v[p] - mean[p]) * (v[q] - mean[q]);
    for (size_t p = 0; p < d; ++p)
        for (size_t q = p; q < d; ++q) {
            cov[p][q] /= static_cast<double>(n);
            cov[q][p] = cov[p][q];
        }

    std::vector<double> eigvals;
    std::vector<std::vector<double>> eigvecs;
    eig_sym_jacobi(cov, eigvals, eigvecs);

    // Fix the sign: the component with the largest magnitude points positive.
    for (int axis = 0; axis < 2; ++axis) {
        size_t arg = 0;
        for (size_t i = 1; i < d; ++i)
            if (std::abs(eigvecs[i][axis]) > std::abs(eigvecs[arg][axis])) arg = i;
        if (eigvecs[arg][axis] < 0.0)
            for (size_t i = 0; i < d; ++i) eigvecs[i][axis] = -eigvecs[i][axis];
    }

    for (size_t i = 0; i < n; ++i) {
        double px = 0.0, py = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double centered = feats[i][j] - mean[j];
            px += centered * eigvecs[j][0];
            py += centered * eigvecs[j][1];
        }
        out[i] = {px, py};
    }
    return out;
}

FeatureAnalysis analyze_separability(nets::LocalizationNet& model,
                                     const std::vector<std::pair<const Image*, const Mask*>>& samples,
                                     int n_per_class, Rng& rng) {
    if (n_per_class < 1) throw std::invalid_argument("analyze_separability: n_per_class must be >= 1");
    if (samples.empty()) throw std::invalid_argument("analyze_separability: no samples");

    // Global pixel pools per class, as (sample, row, col) triples.
    struct Coord {
        int sample, row, col;
    };
    std::vector<Coord> pool[2];
    for (size_t s = 0; s < samples.size(); ++s) {
        const Mask& m = *samples[s].second;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x)
                pool[m.at(y, x) ? 1 : 0].push_back({static_cast<int>(s), y, x});
    }
    if (pool[0].empty()) throw std::invalid_argument("analyze_separability: no original pixels in any mask");
    if (pool[1].empty()) throw std::invalid_argument("analyze_separability: no tampered pixels in any mask");

    auto draw = [&](std::vector<Coord>& p) {
        std::vector<Coord> chosen;
        const int n = static_cast<int>(p.size());
        if (n <= n_per_class) {
            chosen = p;
            while (static_cast<int>(chosen.size()) < n_per_class)
                chosen.push_back(p[static_cast<size_t>(rng.uniform_int(0, n - 1))]);
        } else {
            // Partial Fisher-Yates for a without-replacement draw.
            for (int i = 0; i < n_per_class; ++i) {
                const int j = rng.uniform_int(i, n - 1);
                std::swap(p[i], p[j]);
                chosen.push_back(p[i]);
            }
        }
        return chosen;
    };
    const std::vector<Coord> chosen_orig = draw(pool[0]);
    const std::vector<Coord> chosen_tamp = draw(pool[1]);

    // One forward pass per sample that contributes pixels.
    std::vector<std::vector<std::pair<int, int>>> per_sample_coords(samples.size());
    std::vector<std::vector<std::pair<size_t, int>>> destinations(samples.size());  // (slot, class)
    std::vector<std::vector<double>> feats_orig(chosen_orig.size()), feats_tamp(chosen_tamp.size());
    for (size_t i = 0; i < chosen_orig.size(); ++i) {
        const Coord& c = chosen_orig[i];
        per_sample_coords[c.sample].emplace_back(c.row, c.col);
        destinations[c.sample].emplace_back(i, 0);
    }
    for (size_t i = 0; i < chosen_tamp.size(); ++i) {
        const Coord& c = chosen_tamp[i];
        per_sample_coords[c.sample].emplace_back(c.row, c.col);
        destinations[c.sample].emplace_back(i, 1);
    }
    for (size_t s = 0; s < samples.size(); ++s) {
        if (per_sample_coords[s].empty()) continue;
        auto vecs = nets::extract_pixel_features(model, *samples[s].first, per_sample_coords[s]);
        for (size_t k = 0; k < vecs.size(); ++k) {
            const auto [slot, cls] = destinations[s][k];
            (cls ? feats_tamp : feats_orig)[slot] = std::move(vecs[k]);
        }
    }

    FeatureAnalysis fa;
    fa.n_original = static_cast<int>(feats_orig.size());
    fa.n_tampered = static_cast<int>(feats_tamp.size());
    fa.emd = feature_emd(feats_orig, feats_tamp);

    if (fa.n_original + fa.n_tampered >= 3) {
        std::vector<std::vector<double>> all = feats_orig;
        all.insert(all.end(), feats_tamp.begin(), feats_tamp.end());
        auto pts = project_2d(all);
        fa.points_original.assign(pts.begin(), pts.begin() + fa.n_original);
        fa.points_tampered.assign(pts.begin() + fa.n_original, pts.end());
    }
    return fa;
}

void write_scatter_csv(const FeatureAnalysis& fa, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "x,y,class\n";
    for (const auto& p : fa.points_original) out << p[0] << "," << p[1] << ",original\n";
    for (const auto& p : fa.points_tampered) out << p[0] << "," << p[1] << ",tampered\n";
}

}  // namespace reloc::metrics
