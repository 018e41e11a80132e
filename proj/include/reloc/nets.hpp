#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reloc/image.hpp"
#include "reloc/kernels.hpp"
#include "reloc/rng.hpp"
#include "reloc/tensor.hpp"

namespace reloc::nets {

inline constexpr double kLReluSlope = 0.2;
inline constexpr double kProbFloor = 1e-12;  // keeps localization outputs in the open interval

// Flat view of one named parameter array and its gradient.
struct ParamRef {
    std::string name;
    double* data = nullptr;
    double* grad = nullptr;
    std::vector<int> shape;
    size_t count = 0;
};

void zero_grads(const std::vector<ParamRef>& params);
size_t param_count(const std::vector<ParamRef>& params);

// Parameters always hold float32-representable values (enforced after init
// and after every optimizer step), so checkpoints storing 32-bit reals
// round-trip bit-exactly.
void quantize_params_f32(const std::vector<ParamRef>& params);

// FNV-1a over the float32 image of all parameters, in declaration order.
uint64_t parameter_digest(const std::vector<ParamRef>& params);

struct Conv2d {
    int in_ch = 0, out_ch = 0, k = 1, stride = 1, pad = 0;
    Tensor w, gw;
    std::vector<double> b, gb;
    Tensor x_cache;

    Conv2d() = default;
    Conv2d(int in_ch_, int out_ch_, int k_, int stride_, int pad_);
    void init_fan_in(Rng& rng);
    void init_zero();
    Tensor forward(const Tensor& x, bool keep);
    Tensor backward(const Tensor& gy);  // accumulates gw/gb, returns gx
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// conv3x3 + lrelu, twice.
struct ConvBlock {
    Conv2d c1, c2;
    Tensor z1, z2;  // pre-activations

    ConvBlock() = default;
    ConvBlock(int in_ch, int out_ch);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool keep);
    Tensor backward(const Tensor& gy);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct UNetConfig {
    int in_ch = 3;
    int out_ch = 3;
    int base_width = 16;
    int depth = 3;
    bool residual = true;

    int width(int level) const { return base_width << level; }
    int granularity() const { return 1 << depth; }
    nlohmann::json to_json() const;
    static UNetConfig from_json(const nlohmann::json& j);
    bool operator==(const UNetConfig&) const = default;
};

// Encoder-decoder with skip connections; the deepest (bottleneck) feature map
// is kept around after every forward pass.
struct UNet {
    UNetConfig cfg;
    std::vector<ConvBlock> enc;
    ConvBlock bottom;
    std::vector<ConvBlock> dec;
    Conv2d head;  // 1x1 projection

    std::vector<Tensor> skips;
    std::vector<std::pair<int, int>> pool_hw;
    Tensor bottleneck_cache;

    UNet() = default;
    explicit UNet(UNetConfig cfg_);
    void init(uint64_t seed);
    void check_input(const Tensor& x) const;
    Tensor forward(const Tensor& x, bool keep);
    Tensor backward(const Tensor& gy);
    std::vector<ParamRef> params();
};

struct RestorationNet {
    UNetConfig cfg;
    UNet unet;

    RestorationNet() = default;
    RestorationNet(UNetConfig cfg_, uint64_t init_seed);
    Tensor forward(const Tensor& x, bool keep);
    // Straight-through gradient of the output clamp.
    Tensor backward(const Tensor& gy);
    std::vector<ParamRef> params() { return unet.params(); }
};

struct LocalizationNet {
    UNetConfig cfg;
    UNet unet;
    Tensor prob_cache;

    LocalizationNet() = default;
    LocalizationNet(UNetConfig cfg_, uint64_t init_seed);
    Tensor forward(const Tensor& x, bool keep);
    Tensor backward(const Tensor& gy);
    const Tensor& bottleneck() const { return unet.bottleneck_cache; }
    std::vector<ParamRef> params() { return unet.params(); }
};

struct DiscConfig {
    int in_ch = 3;
    int base_width = 16;
    int n_stages = 3;
    int input_size = 128;

    nlohmann::json to_json() const;
    static DiscConfig from_json(const nlohmann::json& j);
    bool operator==(const DiscConfig&) const = default;
};

// DCGAN-style strided stack ending in a single squashed logit. The final
// layer is zero-initialized so an untrained discriminator outputs exactly 0.5.
struct Discriminator {
    DiscConfig cfg;
    std::vector<Conv2d> stages;
    Conv2d final_conv;
    std::vector<Tensor> z;  // per-stage pre-activations
    Tensor prob_cache;

    Discriminator() = default;
    Discriminator(DiscConfig cfg_, uint64_t init_seed);
    void check_input(const Tensor& x) const;
    std::vector<double> forward(const Tensor& x, bool keep);
    Tensor backward(const std::vector<double>& g_prob);
    std::vector<ParamRef> params();
};

// Spec-level single-image entry points.
Image restore(RestorationNet& net, const Image& image);
ProbabilityMap localize(LocalizationNet& net, const Image& image);
double discriminate(Discriminator& net, const Image& image);

// One feature vector per coordinate, read from the bottleneck feature map
// nearest-neighbor-upsampled to input resolution.
std::vector<std::vector<double>> extract_pixel_features(
    LocalizationNet& net, const Image& image, const std::vector<std::pair<int, int>>& coords);

// Right/bottom reflect padding to the given extents.
Image pad_reflect(const Image& img, int target_h, int target_w);

struct Provenance {
    std::string phase;
    int epoch = 0;
    uint64_t seed = 0;
};

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    char component = '?';  // 'R', 'L', or 'D'
    nlohmann::json config;
    std::vector<NamedArray> arrays;
};

Checkpoint make_checkpoint(RestorationNet& net, const Provenance& prov);
Checkpoint make_checkpoint(LocalizationNet& net, const Provenance& prov);
Checkpoint make_checkpoint(Discriminator& net, const Provenance& prov);

RestorationNet restoration_from_checkpoint(const Checkpoint& ck);
LocalizationNet localization_from_checkpoint(const Checkpoint& ck);
Discriminator discriminator_from_checkpoint(const Checkpoint& ck);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace reloc::nets
