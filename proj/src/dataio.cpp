#include "reloc/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "reloc/imageio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace reloc::dataio {

DegradationSpec DegradationSpec::fixed(int qf) {
    DegradationSpec s;
    s.mode = Mode::Fixed;
    s.qf = qf;
    s.validate();
    return s;
}

DegradationSpec DegradationSpec::uniform(int lo, int hi) {
    DegradationSpec s;
    s.mode = Mode::Uniform;
    s.lo = lo;
    s.hi = hi;
    s.validate();
    return s;
}

DegradationSpec DegradationSpec::parse(const std::string& str) {
    if (str.rfind("fixed:", 0) == 0) return fixed(std::stoi(str.substr(6)));
    if (str.rfind("uniform:", 0) == 0) {
        const auto rest = str.substr(8);
        const auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("degradation spec: expected uniform:lo:hi, got " + str);
        return uniform(std::stoi(rest.substr(0, colon)), std::stoi(rest.substr(colon + 1)));
    }
    throw std::invalid_argument("degradation spec: expected fixed:q or uniform:lo:hi, got " + str);
}

void DegradationSpec::validate() const {
    if (mode == Mode::Fixed) {
        if (qf < 1 || qf > 100)
            throw std::invalid_argument("degradation: fixed qf out of [1,100]: " + std::to_string(qf));
    } else {
        if (lo < 1 || hi > 100 || lo > hi)
            throw std::invalid_argument("degradation: need 1 <= lo <= hi <= 100, got " +
                                        std::to_string(lo) + ".." + std::to_string(hi));
    }
}

std::string DegradationSpec::str() const {
    if (mode == Mode::Fixed) return "fixed:" + std::to_string(qf);
    return "uniform:" + std::to_string(lo) + ":" + std::to_string(hi);
}

int sample_qf(const DegradationSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.mode == DegradationSpec::Mode::Fixed) return spec.qf;
    return rng.uniform_int(spec.lo, spec.hi);
}

Image jpeg_distort(const Image& image, int qf) {
    if (qf < 1 || qf > 100)
        throw std::invalid_argument("jpeg_distort: qf out of [1,100]: " + std::to_string(qf));
    if (image.role != ImageRole::Plain)
        throw std::invalid_argument("jpeg_distort: input must carry the plain role, got " +
                                    std::string(role_name(image.role)));
    Image out = imageio::jpeg_decode(imageio::jpeg_encode(image, qf), ImageRole::Distorted);
    if (out.h != image.h || out.w != image.w)
        throw std::runtime_error("jpeg_distort: codec changed geometry");
    return out;
}

namespace {

fs::path index_path(const fs::path& root) { return root / "manifest.jsonl"; }

SampleRef make_ref(const fs::path& root, const std::string& id) {
    SampleRef ref;
    ref.id = id;
    ref.image_path = root / "images" / (id + ".png");
    ref.mask_path = root / "masks" / (id + ".png");
    return ref;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, const std::string& split) {
    DatasetManifest m;
    m.root = root;
    m.split = split;

    if (fs::exists(index_path(root))) {
        std::ifstream in(index_path(root));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            const std::string entry_split = j.value("split", "all");
            if (split != "all" && entry_split != split) continue;
            SampleRef ref = make_ref(root, j.at("id").get<std::string>());
            if (j.contains("qf")) {
                ref.cached_qf = j.at("qf").get<int>();
                ref.distorted_path = root / "distorted" / (ref.id + ".jpg");
            }
            m.entries.push_back(std::move(ref));
        }
    } else {
        const fs::path images = root / "images";
        if (!fs::is_directory(images))
            throw std::runtime_error("no samples found in " + root.string());
        std::vector<std::string> ids;
        for (const auto& e : fs::directory_iterator(images))
            if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
        std::sort(ids.begin(), ids.end());
        for (const std::string& id : ids) {
            SampleRef ref = make_ref(root, id);
            if (!fs::exists(ref.mask_path))
                throw std::runtime_error("missing mask for image id '" + id + "' (expected " +
                                         ref.mask_path.string() + ")");
            m.entries.push_back(std::move(ref));
        }
    }

    std::sort(m.entries.begin(), m.entries.end(),
              [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; });
    for (size_t i = 1; i < m.entries.size(); ++i)
        if (m.entries[i].id == m.entries[i - 1].id)
            throw std::runtime_error("duplicate sample id '" + m.entries[i].id + "'");
    if (m.entries.empty()) throw std::runtime_error("no samples found in " + root.string());
    return m;
}

Sample load_sample(const SampleRef& ref) {
    Sample s;
    s.id = ref.id;
    s.plain = imageio::read_png_rgb(ref.image_path, ImageRole::Plain);
    s.mask = imageio::read_png_mask(ref.mask_path);
    if (s.mask.h != s.plain.h || s.mask.w != s.plain.w)
        throw std::runtime_error("sample '" + ref.id + "': mask size " + std::to_string(s.mask.w) +
                                 "x" + std::to_string(s.mask.h) + " does not match image " +
                                 std::to_string(s.plain.w) + "x" + std::to_string(s.plain.h));
    if (ref.cached_qf && fs::exists(ref.distorted_path))
        s.distorted = imageio::read_jpeg(ref.distorted_path, ImageRole::Distorted);
    return s;
}

void save_index(const fs::path& root, const std::vector<const DatasetManifest*>& parts) {
    std::ofstream out(index_path(root));
    if (!out) throw std::runtime_error("cannot write " + index_path(root).string());
    for (const DatasetManifest* part : parts) {
        for (const SampleRef& ref : part->entries) {
            json j{{"id", ref.id}, {"split", part->split}};
            if (ref.cached_qf) j["qf"] = *ref.cached_qf;
            out << j.dump() << "\n";
        }
    }
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_frac, uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("split_dataset: train_frac must be in (0,1)");
    const size_t n = manifest.entries.size();
    if (n < 2) throw std::invalid_argument("split_dataset: need at least 2 samples");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::derive(seed, 0x5917));
    rng.shuffle(order);

    const size_t n_train = static_cast<size_t>(std::lround(train_frac * static_cast<double>(n)));
    DatasetManifest train = manifest, test = manifest;
    train.entries.clear();
    test.entries.clear();
    train.split = "train";
    test.split = "test";
    for (size_t i = 0; i < n; ++i)
        (i < n_train ? train : test).entries.push_back(manifest.entries[order[i]]);
    auto by_id = [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; };
    std::sort(train.entries.begin(), train.entries.end(), by_id);
    std::sort(test.entries.begin(), test.entries.end(), by_id);
    return {train, test};
}

namespace {

// Procedural texture: a smooth multi-grating field shared across the whole
// image plus an oriented high-frequency micro-texture. The tamper cue is the
// micro-texture only (the smooth field stays continuous across the splice),
// with host textures near-axis-aligned and donor textures diagonal. The
// micro-texture has a low-amplitude luminance grating, which JPEG at the
// experimental quality factors attenuates heavily, and a high-frequency
// chroma grating, which chroma subsampling essentially erases.
struct MicroTexture {
    double luma_angle = 0.0, luma_period = 3.0, luma_amp = 0.05, luma_phase = 0.0;
    double chroma_angle = 0.0, chroma_period = 2.5, chroma_amp = 0.05, chroma_phase = 0.0;

    void add(int y, int x, double rgb[3]) const {
        const double lt = (x * std::cos(luma_angle) + y * std::sin(luma_angle)) / luma_period;
        const double luma = luma_amp * std::sin(2.0 * M_PI * lt + luma_phase);
        const double ct =
            (x * std::cos(chroma_angle) + y * std::sin(chroma_angle)) / chroma_period;
        const double chroma = chroma_amp * std::sin(2.0 * M_PI * ct + chroma_phase);
        rgb[0] += luma + chroma;
        rgb[1] += luma;
        rgb[2] += luma - chroma;
    }
};

struct SmoothField {
    struct Grating {
        double fx, fy, phase;
        double amp[3];
    };
    std::vector<Grating> parts;
    double base[3];

    double value(int c, int y, int x, int h, int w) const {
        double v = base[c];
        for (const Grating& g : parts)
            v += g.amp[c] * std::sin(2.0 * M_PI * (g.fx * x / w + g.fy * y / h) + g.phase);
        return v;
    }
};

SmoothField draw_field(Rng& rng) {
    SmoothField f;
    for (int c = 0; c < 3; ++c) f.base[c] = rng.uniform(0.35, 0.65);
    const int k = rng.uniform_int(2, 3);
    for (int i = 0; i < k; ++i) {
        SmoothField::Grating g;
        const double freq = rng.uniform(0.5, 2.0);
        const double ang = rng.uniform(0.0, M_PI);
        g.fx = freq * std::cos(ang);
        g.fy = freq * std::sin(ang);
        g.phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int c = 0; c < 3; ++c) g.amp[c] = rng.uniform(0.02, 0.09);
        f.parts.push_back(g);
    }
    return f;
}

double class_angle(Rng& rng, bool donor) {
    if (donor) return rng.uniform(35.0, 55.0) * M_PI / 180.0;
    const double a = rng.uniform(-18.0, 18.0);
    return (rng.uniform() < 0.5 ? a : a + 90.0) * M_PI / 180.0;
}

MicroTexture draw_micro(Rng& rng, bool donor) {
    MicroTexture m;
    m.luma_angle = class_angle(rng, donor);
    m.luma_period = rng.uniform(2.2, 2.8);
    m.luma_amp = rng.uniform(0.025, 0.04);
    m.luma_phase = rng.uniform(0.0, 2.0 * M_PI);
    m.chroma_angle = class_angle(rng, donor);
    m.chroma_period = rng.uniform(2.0, 2.8);
    m.chroma_amp = rng.uniform(0.04, 0.06);
    m.chroma_phase = rng.uniform(0.0, 2.0 * M_PI);
    return m;
}

Mask draw_patch(Rng& rng, int h, int w) {
    for (int attempt = 0; attempt < 32; ++attempt) {
        const double frac = rng.uniform(0.07, 0.36);
        const double aspect = rng.uniform(0.6, 1.67);
        const bool ellipse = rng.uniform() < 0.5;
        double area = frac * h * w;
        if (ellipse) area *= 4.0 / M_PI;  // bounding-box area for the inscribed ellipse
        int pw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 4, w);
        int ph = std::clamp(static_cast<int>(std::lround(area / pw)), 4, h);
        const int x0 = rng.uniform_int(0, w - pw);
        const int y0 = rng.uniform_int(0, h - ph);

        Mask m(h, w);
        size_t count = 0;
        for (int y = y0; y < y0 + ph; ++y)
            for (int x = x0; x < x0 + pw; ++x) {
                bool inside = true;
                if (ellipse) {
                    const double u = (x - x0 + 0.5) / pw * 2.0 - 1.0;
                    const double v = (y - y0 + 0.5) / ph * 2.0 - 1.0;
                    inside = u * u + v * v <= 1.0;
                }
                if (inside) {
                    m.at(y, x) = 1;
                    ++count;
                }
            }
        const double got = static_cast<double>(count) / (static_cast<double>(h) * w);
        if (got >= 0.05 && got <= 0.40) return m;
    }
    // Deterministic fallback: a centered rectangle of ~20% area.
    Mask m(h, w);
    const int pw = std::max(4, static_cast<int>(std::lround(w * 0.45)));
    const int ph = std::max(4, static_cast<int>(std::lround(h * 0.45)));
    for (int y = (h - ph) / 2; y < (h - ph) / 2 + ph; ++y)
        for (int x = (w - pw) / 2; x < (w - pw) / 2 + pw; ++x) m.at(y, x) = 1;
    return m;
}

}  // namespace

DatasetManifest synth_tamper_dataset(int n, int image_size, uint64_t seed,
                                     const fs::path& out_root, int size_jitter) {
    if (n < 1) throw std::invalid_argument("synth_tamper_dataset: n must be >= 1");
    if (image_size < 64) throw std::invalid_argument("synth_tamper_dataset: image_size must be >= 64");
    if (size_jitter < 0 || size_jitter >= image_size)
        throw std::invalid_argument("synth_tamper_dataset: bad size_jitter");

    std::error_code ec;
    fs::create_directories(out_root / "images", ec);
    fs::create_directories(out_root / "masks", ec);
    if (!fs::is_directory(out_root / "images") || !fs::is_directory(out_root / "masks"))
        throw std::runtime_error("cannot create dataset directories under " + out_root.string());

    DatasetManifest m;
    m.root = out_root;
    m.split = "all";

    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(i)));
        const int h = size_jitter ? rng.uniform_int(image_size - size_jitter, image_size) : image_size;
        const int w = size_jitter ? rng.uniform_int(image_size - size_jitter, image_size) : image_size;

        const SmoothField field = draw_field(rng);
        const MicroTexture host = draw_micro(rng, /*donor=*/false);
        const MicroTexture donor = draw_micro(rng, /*donor=*/true);
        const Mask mask = draw_patch(rng, h, w);

        Image img(h, w, ImageRole::Plain);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double rgb[3];
                for (int c = 0; c < 3; ++c) rgb[c] = field.value(c, y, x, h, w);
                (mask.at(y, x) ? donor : host).add(y, x, rgb);
                const double noise = (rng.uniform() - 0.5) * 0.03;
                for (int c = 0; c < 3; ++c)
                    img.at(c, y, x) = std::clamp(rgb[c] + noise, 0.02, 0.98);
            }

        char id[16];
        std::snprintf(id, sizeof id, "%05d", i);
        SampleRef ref = make_ref(out_root, id);
        imageio::write_png_rgb(ref.image_path, img);
        imageio::write_png_mask(ref.mask_path, mask);
        m.entries.push_back(std::move(ref));
    }
    save_index(out_root, {&m});
    return m;
}

std::vector<Sample> extract_blocks(const Sample& sample, int block, int n_blocks, Rng& rng) {
    const int h = sample.plain.h, w = sample.plain.w;
    if (block > std::min(h, w))
        throw std::invalid_argument("extract_blocks: block " + std::to_string(block) +
                                    " exceeds image extent " + std::to_string(std::min(h, w)));
    if (n_blocks < 1) throw std::invalid_argument("extract_blocks: n_blocks must be >= 1");

    const bool has_tamper = sample.mask.any();
    const int quota = has_tamper ? (n_blocks + 1) / 2 : 0;

    std::vector<std::pair<int, int>> tampered;
    if (has_tamper)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (sample.mask.at(y, x)) tampered.emplace_back(y, x);

    auto crop_contains_tamper = [&](int y0, int x0) {
        for (int y = y0; y < y0 + block; ++y)
            for (int x = x0; x < x0 + block; ++x)
                if (sample.mask.at(y, x)) return true;
        return false;
    };

    std::vector<Sample> out;
    out.reserve(n_blocks);
    for (int i = 0; i < n_blocks; ++i) {
        int y0 = rng.uniform_int(0, h - block);
        int x0 = rng.uniform_int(0, w - block);
        if (i < quota && !crop_contains_tamper(y0, x0)) {
            bool found = false;
            for (int attempt = 0; attempt < 32 && !found; ++attempt) {
                y0 = rng.uniform_int(0, h - block);
                x0 = rng.uniform_int(0, w - block);
                found = crop_contains_tamper(y0, x0);
            }
            if (!found) {
                // Force a crop around a random tampered pixel.
                const auto [ty, tx] = tampered[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(tampered.size()) - 1))];
                y0 = std::clamp(ty - rng.uniform_int(0, block - 1), 0, h - block);
                x0 = std::clamp(tx - rng.uniform_int(0, block - 1), 0, w - block);
            }
        }

        Sample crop;
        crop.id = sample.id + "#" + std::to_string(y0) + "," + std::to_string(x0);
        crop.plain = Image(block, block, ImageRole::Plain);
        crop.mask = Mask(block, block);
        if (sample.distorted) crop.distorted = Image(block, block, ImageRole::Distorted);
        for (int y = 0; y < block; ++y)
            for (int x = 0; x < block; ++x) {
                for (int c = 0; c < 3; ++c) {
                    crop.plain.at(c, y, x) = sample.plain.at(c, y0 + y, x0 + x);
                    if (sample.distorted)
                        crop.distorted->at(c, y, x) = sample.distorted->at(c, y0 + y, x0 + x);
                }
                crop.mask.at(y, x) = sample.mask.at(y0 + y, x0 + x);
            }
        out.push_back(std::move(crop));
    }
    return out;
}

void cache_distorted(DatasetManifest& manifest, int qf) {
    std::error_code ec;
    fs::create_directories(manifest.root / "distorted", ec);
    for (SampleRef& ref : manifest.entries) {
        Sample s = load_sample(ref);
        ref.distorted_path = manifest.root / "distorted" / (ref.id + ".jpg");
        imageio::write_jpeg(ref.distorted_path, jpeg_distort(s.plain, qf), qf);
        ref.cached_qf = qf;
    }
}

}  // namespace reloc::dataio
