#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reloc/image.hpp"
#include "reloc/rng.hpp"

namespace reloc::dataio {

// JPEG degradation regime: a fixed quality factor, or per-sample uniform
// draws from a closed interval.
struct DegradationSpec {
    enum class Mode { Fixed, Uniform };
    Mode mode = Mode::Fixed;
    int qf = 75;
    int lo = 70, hi = 100;

    static DegradationSpec fixed(int qf);
    static DegradationSpec uniform(int lo, int hi);
    static DegradationSpec parse(const std::string& s);  // "fixed:75" / "uniform:70:100"
    void validate() const;
    std::string str() const;
};

int sample_qf(const DegradationSpec& spec, Rng& rng);

// Encode-then-decode through baseline JPEG at the given quality. Geometry is
// preserved; the result carries the distorted role.
Image jpeg_distort(const Image& image, int qf);

struct Sample {
    std::string id;
    Image plain;
    std::optional<Image> distorted;
    Mask mask;
};

struct SampleRef {
    std::string id;
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    std::optional<int> cached_qf;
    std::filesystem::path distorted_path;  // set iff cached_qf
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<SampleRef> entries;
    std::string split = "all";
    DegradationSpec degradation;

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }
};

// On-disk layout: <root>/images/<id>.png, <root>/masks/<id>.png, optional
// <root>/distorted/<id>.jpg, plus a line-delimited JSON index manifest.jsonl
// with fields (id, split, qf when cached). When the index is present only
// entries tagged with the requested split are returned ("all" returns
// everything); otherwise the directory is scanned and every pair gets the
// requested tag.
DatasetManifest load_dataset(const std::filesystem::path& root, const std::string& split);

Sample load_sample(const SampleRef& ref);

void save_index(const std::filesystem::path& root, const std::vector<const DatasetManifest*>& parts);

// Deterministic disjoint+exhaustive partition; |train| = round(train_frac * N).
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_frac, uint64_t seed);

// Writes n (plain, mask) pairs under out_root. Each plain image is a textured
// base with a patch of foreign micro-texture spliced in; the patch covers
// 5-40% of the area and the mask marks it. size_jitter > 0 draws each image
// extent uniformly from [image_size - size_jitter, image_size].
DatasetManifest synth_tamper_dataset(int n, int image_size, uint64_t seed,
                                     const std::filesystem::path& out_root, int size_jitter = 0);

// n_blocks aligned random crops of (plain, distorted, mask). When the source
// mask is non-empty, at least half of the returned blocks contain a tampered
// pixel.
std::vector<Sample> extract_blocks(const Sample& sample, int block, int n_blocks, Rng& rng);

// Write <root>/distorted/<id>.jpg for every entry and tag the index with the
// quality factor used.
void cache_distorted(DatasetManifest& manifest, int qf);

}  // namespace reloc::dataio
