#include "reloc/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reloc::kernels;

namespace reloc::nets {

void zero_grads(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) std::fill(p.grad, p.grad + p.count, 0.0);
}

size_t param_count(const std::vector<ParamRef>& params) {
    size_t total = 0;
    for (const ParamRef& p : params) total += p.count;
    return total;
}

void quantize_params_f32(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params)
        for (size_t i = 0; i < p.count; ++i)
            p.data[i] = static_cast<double>(static_cast<float>(p.data[i]));
}

uint64_t parameter_digest(const std::vector<ParamRef>& params) {
    uint64_t hash = 1469598103934665603ULL;
    for (const ParamRef& p : params)
        for (size_t i = 0; i < p.count; ++i) {
            const float f = static_cast<float>(p.data[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, sizeof bits);
            for (int byte = 0; byte < 4; ++byte) {
                hash ^= (bits >> (8 * byte)) & 0xff;
                hash *= 1099511628211ULL;
            }
        }
    return hash;
}

Conv2d::Conv2d(int in_ch_, int out_ch_, int k_, int stride_, int pad_)
    : in_ch(in_ch_), out_ch(out_ch_), k(k_), stride(stride_), pad(pad_),
      w(out_ch_, in_ch_, k_, k_), gw(out_ch_, in_ch_, k_, k_),
      b(out_ch_, 0.0), gb(out_ch_, 0.0) {}

void Conv2d::init_fan_in(Rng& rng) {
    const double scale = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (double& e : w.v) e = rng.normal() * scale;
    std::fill(b.begin(), b.end(), 0.0);
}

void Conv2d::init_zero() {
    w.zero();
    std::fill(b.begin(), b.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, bool keep) {
    if (x.c != in_ch)
        throw std::invalid_argument("conv: expected " + std::to_string(in_ch) + " channels, got " +
                                    x.shape_str());
    if (keep) x_cache = x;
    return conv2d_forward(x, w, b, {stride, pad});
}

Tensor Conv2d::backward(const Tensor& gy) {
    conv2d_backward_params(gy, x_cache, {stride, pad}, gw, gb);
    return conv2d_backward_input(gy, w, x_cache.h, x_cache.w, {stride, pad});
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", w.v.data(), gw.v.data(), {out_ch, in_ch, k, k}, w.size()});
    out.push_back({prefix + ".b", b.data(), gb.data(), {out_ch}, b.size()});
}

ConvBlock::ConvBlock(int in_ch, int out_ch)
    : c1(in_ch, out_ch, 3, 1, 1), c2(out_ch, out_ch, 3, 1, 1) {}

void ConvBlock::init(Rng& rng) {
    c1.init_fan_in(rng);
    c2.init_fan_in(rng);
}

Tensor ConvBlock::forward(const Tensor& x, bool keep) {
    Tensor t = c1.forward(x, keep);
    if (keep) z1 = t;
    t = leaky_relu_forward(t, kLReluSlope);
    t = c2.forward(t, keep);
    if (keep) z2 = t;
    return leaky_relu_forward(t, kLReluSlope);
}

Tensor ConvBlock::backward(const Tensor& gy) {
    Tensor g = leaky_relu_backward(z2, gy, kLReluSlope);
    g = c2.backward(g);
    g = leaky_relu_backward(z1, g, kLReluSlope);
    return c1.backward(g);
}

void ConvBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
}

json UNetConfig::to_json() const {
    return {{"in_ch", in_ch},
            {"out_ch", out_ch},
            {"base_width", base_width},
            {"depth", depth},
            {"residual", residual}};
}

UNetConfig UNetConfig::from_json(const json& j) {
    UNetConfig c;
    c.in_ch = j.at("in_ch");
    c.out_ch = j.at("out_ch");
    c.base_width = j.at("base_width");
    c.depth = j.at("depth");
    c.residual = j.at("residual");
    return c;
}

UNet::UNet(UNetConfig cfg_) : cfg(cfg_) {
    if (cfg.depth < 1 || cfg.base_width < 1)
        throw std::invalid_argument("UNet: depth and base_width must be >= 1");
    for (int l = 0; l < cfg.depth; ++l)
        enc.emplace_back(l == 0 ? cfg.in_ch : cfg.width(l - 1), cfg.width(l));
    bottom = ConvBlock(cfg.width(cfg.depth - 1), cfg.width(cfg.depth));
    for (int l = 0; l < cfg.depth; ++l)
        dec.emplace_back(cfg.width(l + 1) + cfg.width(l), cfg.width(l));
    head = Conv2d(cfg.width(0), cfg.out_ch, 1, 1, 0);
    skips.resize(cfg.depth);
    pool_hw.resize(cfg.depth);
}

void UNet::init(uint64_t seed) {
    Rng rng(Rng::derive(seed, 0xA11));
    for (ConvBlock& blk : enc) blk.init(rng);
    bottom.init(rng);
    for (ConvBlock& blk : dec) blk.init(rng);
    head.init_fan_in(rng);
    quantize_params_f32(params());
}

void UNet::check_input(const Tensor& x) const {
    const int g = cfg.granularity();
    if (x.h % g != 0 || x.w % g != 0)
        throw std::invalid_argument("input extents " + x.shape_str() + " not divisible by 2^depth=" +
                                    std::to_string(g) + "; pad the input first");
    if (x.c != cfg.in_ch)
        throw std::invalid_argument("input has " + std::to_string(x.c) + " channels, expected " +
                                    std::to_string(cfg.in_ch));
}

Tensor UNet::forward(const Tensor& x, bool keep) {
    check_input(x);
    Tensor cur = x;
    for (int l = 0; l < cfg.depth; ++l) {
        cur = enc[l].forward(cur, keep);
        skips[l] = cur;
        pool_hw[l] = {cur.h, cur.w};
        cur = avgpool2_forward(cur);
    }
    cur = bottom.forward(cur, keep);
    bottleneck_cache = cur;
    for (int l = cfg.depth - 1; l >= 0; --l) {
        Tensor up = upsample_nn2_forward(cur);
        cur = dec[l].forward(concat_channels(up, skips[l]), keep);
    }
    return head.forward(cur, keep);
}

Tensor UNet::backward(const Tensor& gy) {
    Tensor g = head.backward(gy);
    std::vector<Tensor> skip_grads(cfg.depth);
    for (int l = 0; l < cfg.depth; ++l) {
        g = dec[l].backward(g);
        Tensor g_up, g_skip;
        split_channels(g, cfg.width(l + 1), g_up, g_skip);
        skip_grads[l] = std::move(g_skip);
        g = upsample_nn2_backward(g_up);
    }
    g = bottom.backward(g);
    for (int l = cfg.depth - 1; l >= 0; --l) {
        Tensor gi = avgpool2_backward(g, pool_hw[l].first, pool_hw[l].second);
        for (size_t t = 0; t < gi.size(); ++t) gi.v[t] += skip_grads[l].v[t];
        g = enc[l].backward(gi);
    }
    return g;
}

std::vector<ParamRef> UNet::params() {
    std::vector<ParamRef> out;
    for (int l = 0; l < cfg.depth; ++l) enc[l].collect("enc" + std::to_string(l), out);
    bottom.collect("bottom", out);
    for (int l = 0; l < cfg.depth; ++l) dec[l].collect("dec" + std::to_string(l), out);
    head.collect("head", out);
    return out;
}

RestorationNet::RestorationNet(UNetConfig cfg_, uint64_t init_seed) : cfg(cfg_) {
    cfg.out_ch = 3;
    unet = UNet(cfg);
    unet.init(init_seed);
    // Small-gain head so the residual restorer starts near the identity and
    // the output clamp stays inactive at initialization.
    for (double& e : unet.head.w.v) e *= 0.05;
    quantize_params_f32(unet.params());
}

Tensor RestorationNet::forward(const Tensor& x, bool keep) {
    Tensor y = unet.forward(x, keep);
    if (cfg.residual)
        for (size_t t = 0; t < y.size(); ++t) y.v[t] += x.v[t];
    for (double& e : y.v) e = std::clamp(e, 0.0, 1.0);
    return y;
}

Tensor RestorationNet::backward(const Tensor& gy) {
    Tensor gx = unet.backward(gy);  // clamp passes gradients straight through
    if (cfg.residual)
        for (size_t t = 0; t < gx.size(); ++t) gx.v[t] += gy.v[t];
    return gx;
}

LocalizationNet::LocalizationNet(UNetConfig cfg_, uint64_t init_seed) : cfg(cfg_) {
    cfg.out_ch = 1;
    cfg.residual = false;
    unet = UNet(cfg);
    unet.init(init_seed);
}

Tensor LocalizationNet::forward(const Tensor& x, bool keep) {
    Tensor p = sigmoid_forward(unet.forward(x, keep));
    for (double& e : p.v) e = std::clamp(e, kProbFloor, 1.0 - kProbFloor);
    prob_cache = p;
    return p;
}

Tensor LocalizationNet::backward(const Tensor& gy) {
    return unet.backward(sigmoid_backward(prob_cache, gy));
}

json DiscConfig::to_json() const {
    return {{"in_ch", in_ch},
            {"base_width", base_width},
            {"n_stages", n_stages},
            {"input_size", input_size}};
}

DiscConfig DiscConfig::from_json(const json& j) {
    DiscConfig c;
    c.in_ch = j.at("in_ch");
    c.base_width = j.at("base_width");
    c.n_stages = j.at("n_stages");
    c.input_size = j.at("input_size");
    return c;
}

Discriminator::Discriminator(DiscConfig cfg_, uint64_t init_seed) : cfg(cfg_) {
    if (cfg.n_stages < 1) throw std::invalid_argument("Discriminator: need at least one stage");
    if (cfg.input_size % (1 << cfg.n_stages) != 0)
        throw std::invalid_argument("Discriminator: input_size must be divisible by 2^n_stages");
    const int remaining = cfg.input_size >> cfg.n_stages;
    if (remaining < 1) throw std::invalid_argument("Discriminator: too many stages");

    Rng rng(Rng::derive(init_seed, 0xD15C));
    for (int s = 0; s < cfg.n_stages; ++s) {
        stages.emplace_back(s == 0 ? cfg.in_ch : cfg.base_width << (s - 1), cfg.base_width << s, 4,
                            2, 1);
        stages.back().init_fan_in(rng);
    }
    final_conv = Conv2d(cfg.base_width << (cfg.n_stages - 1), 1, remaining, 1, 0);
    final_conv.init_zero();
    z.resize(cfg.n_stages);
    quantize_params_f32(params());
}

void Discriminator::check_input(const Tensor& x) const {
    if (x.h != cfg.input_size || x.w != cfg.input_size || x.c != cfg.in_ch)
        throw std::invalid_argument("discriminator expects " + std::to_string(cfg.input_size) + "x" +
                                    std::to_string(cfg.input_size) + "x" + std::to_string(cfg.in_ch) +
                                    " input, got " + x.shape_str());
}

std::vector<double> Discriminator::forward(const Tensor& x, bool keep) {
    check_input(x);
    Tensor cur = x;
    for (int s = 0; s < cfg.n_stages; ++s) {
        cur = stages[s].forward(cur, keep);
        if (keep) z[s] = cur;
        cur = leaky_relu_forward(cur, kLReluSlope);
    }
    Tensor logits = final_conv.forward(cur, keep);  // [N,1,1,1]
    prob_cache = sigmoid_forward(logits);
    std::vector<double> out(prob_cache.v.begin(), prob_cache.v.end());
    for (double& p : out) p = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
    return out;
}

Tensor Discriminator::backward(const std::vector<double>& g_prob) {
    if (static_cast<int>(g_prob.size()) != prob_cache.n)
        throw std::invalid_argument("discriminator backward: gradient batch mismatch");
    Tensor g_logit(prob_cache.n, 1, 1, 1);
    for (int i = 0; i < prob_cache.n; ++i) {
        const double p = prob_cache.v[i];
        g_logit.v[i] = g_prob[i] * p * (1.0 - p);
    }
    Tensor g = final_conv.backward(g_logit);
    for (int s = cfg.n_stages - 1; s >= 0; --s) {
        g = leaky_relu_backward(z[s], g, kLReluSlope);
        g = stages[s].backward(g);
    }
    return g;
}

std::vector<ParamRef> Discriminator::params() {
    std::vector<ParamRef> out;
    for (int s = 0; s < cfg.n_stages; ++s) stages[s].collect("stage" + std::to_string(s), out);
    final_conv.collect("final", out);
    return out;
}

Image restore(RestorationNet& net, const Image& image) {
    Tensor y = net.forward(image_to_tensor(image), false);
    return tensor_to_image(y, 0, ImageRole::Restored);
}

ProbabilityMap localize(LocalizationNet& net, const Image& image) {
    Tensor p = net.forward(image_to_tensor(image), false);
    ProbabilityMap map(p.h, p.w);
    std::copy(p.v.begin(), p.v.end(), map.v.begin());
    return map;
}

double discriminate(Discriminator& net, const Image& image) {
    return net.forward(image_to_tensor(image), false)[0];
}

namespace {
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}
}  // namespace

Image pad_reflect(const Image& img, int target_h, int target_w) {
    if (target_h < img.h || target_w < img.w)
        throw std::invalid_argument("pad_reflect: target smaller than image");
    if (target_h == img.h && target_w == img.w) return img;
    Image out(target_h, target_w, img.role);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x)
                out.at(c, y, x) = img.at(c, reflect_index(y, img.h), reflect_index(x, img.w));
    return out;
}

std::vector<std::vector<double>> extract_pixel_features(
    LocalizationNet& net, const Image& image, const std::vector<std::pair<int, int>>& coords) {
    const int g = net.cfg.granularity();
    const int ph = (image.h + g - 1) / g * g;
    const int pw = (image.w + g - 1) / g * g;
    net.forward(image_to_tensor(pad_reflect(image, ph, pw)), false);
    const Tensor& feat = net.bottleneck();

    std::vector<std::vector<double>> out;
    out.reserve(coords.size());
    for (const auto& [row, col] : coords) {
        if (row < 0 || row >= image.h || col < 0 || col >= image.w)
            throw std::invalid_argument("extract_pixel_features: coordinate (" +
                                        std::to_string(row) + "," + std::to_string(col) +
                                        ") out of bounds");
        const int fy = row >> net.cfg.depth;
        const int fx = col >> net.cfg.depth;
        std::vector<double> vec(feat.c);
        for (int c = 0; c < feat.c; ++c) vec[c] = feat.at(0, c, fy, fx);
        out.push_back(std::move(vec));
    }
    return out;
}

namespace {

Checkpoint checkpoint_from_params(char component, json config, std::vector<ParamRef> params,
                                  const Provenance& prov) {
    Checkpoint ck;
    ck.component = component;
    config["provenance"] = {{"phase", prov.phase}, {"epoch", prov.epoch}, {"seed", prov.seed}};
    ck.config = std::move(config);
    for (const ParamRef& p : params) {
        NamedArray arr;
        arr.name = p.name;
        arr.shape = p.shape;
        arr.data.resize(p.count);
        for (size_t i = 0; i < p.count; ++i) arr.data[i] = static_cast<float>(p.data[i]);
        ck.arrays.push_back(std::move(arr));
    }
    return ck;
}

void params_from_checkpoint(const Checkpoint& ck, std::vector<ParamRef> params) {
    if (ck.arrays.size() != params.size())
        throw std::runtime_error("checkpoint config mismatch: expected " +
                                 std::to_string(params.size()) + " arrays, file has " +
                                 std::to_string(ck.arrays.size()));
    for (size_t a = 0; a < params.size(); ++a) {
        const NamedArray& arr = ck.arrays[a];
        const ParamRef& p = params[a];
        if (arr.name != p.name || arr.shape != p.shape || arr.data.size() != p.count)
            throw std::runtime_error("checkpoint config mismatch at array '" + arr.name + "'");
        for (size_t i = 0; i < p.count; ++i) p.data[i] = static_cast<double>(arr.data[i]);
    }
}

void require_component(const Checkpoint& ck, char want) {
    if (ck.component != want)
        throw std::runtime_error(std::string("checkpoint holds component '") + ck.component +
                                 "', expected '" + want + "'");
}

}  // namespace

Checkpoint make_checkpoint(RestorationNet& net, const Provenance& prov) {
    return checkpoint_from_params('R', json{{"net", net.cfg.to_json()}}, net.params(), prov);
}

Checkpoint make_checkpoint(LocalizationNet& net, const Provenance& prov) {
    return checkpoint_from_params('L', json{{"net", net.cfg.to_json()}}, net.params(), prov);
}

Checkpoint make_checkpoint(Discriminator& net, const Provenance& prov) {
    return checkpoint_from_params('D', json{{"net", net.cfg.to_json()}}, net.params(), prov);
}

RestorationNet restoration_from_checkpoint(const Checkpoint& ck) {
    require_component(ck, 'R');
    RestorationNet net(UNetConfig::from_json(ck.config.at("net")), 0);
    params_from_checkpoint(ck, net.params());
    return net;
}

LocalizationNet localization_from_checkpoint(const Checkpoint& ck) {
    require_component(ck, 'L');
    LocalizationNet net(UNetConfig::from_json(ck.config.at("net")), 0);
    params_from_checkpoint(ck, net.params());
    return net;
}

Discriminator discriminator_from_checkpoint(const Checkpoint& ck) {
    require_component(ck, 'D');
    Discriminator net(DiscConfig::from_json(ck.config.at("net")), 0);
    params_from_checkpoint(ck, net.params());
    return net;
}

namespace {

constexpr char kMagic[8] = {'R', 'L', 'O', 'C', 'C', 'K', 'P', '1'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '.'};

template <class T>
void write_le(std::ofstream& out, T value) {
    uint8_t bytes[sizeof(T)];
    uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<uint8_t>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::ifstream& in) {
    uint8_t bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint truncated");
    uint64_t bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<uint64_t>(bytes[i]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(kMagic, sizeof kMagic);
        write_le<uint8_t>(out, static_cast<uint8_t>(ck.component));
        const std::string cfg = ck.config.dump();
        write_le<uint32_t>(out, static_cast<uint32_t>(cfg.size()));
        out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        write_le<uint32_t>(out, static_cast<uint32_t>(ck.arrays.size()));
        for (const NamedArray& arr : ck.arrays) {
            write_le<uint16_t>(out, static_cast<uint16_t>(arr.name.size()));
            out.write(arr.name.data(), static_cast<std::streamsize>(arr.name.size()));
            write_le<uint8_t>(out, static_cast<uint8_t>(arr.shape.size()));
            for (int d : arr.shape) write_le<uint32_t>(out, static_cast<uint32_t>(d));
            for (float f : arr.data) write_le<float>(out, f);
        }
        out.write(kTrailer, sizeof kTrailer);
        if (!out) throw std::runtime_error("write failed: " + path.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());

    Checkpoint ck;
    ck.component = static_cast<char>(read_le<uint8_t>(in));
    const uint32_t cfg_len = read_le<uint32_t>(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), cfg_len);
    if (!in) throw std::runtime_error("checkpoint truncated");
    ck.config = json::parse(cfg);

    const uint32_t n_arrays = read_le<uint32_t>(in);
    for (uint32_t a = 0; a < n_arrays; ++a) {
        NamedArray arr;
        const uint16_t name_len = read_le<uint16_t>(in);
        arr.name.resize(name_len);
        in.read(arr.name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint truncated");
        const uint8_t ndim = read_le<uint8_t>(in);
        size_t count = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            arr.shape.push_back(static_cast<int>(read_le<uint32_t>(in)));
            count *= static_cast<size_t>(arr.shape.back());
        }
        arr.data.resize(count);
        for (size_t i = 0; i < count; ++i) arr.data[i] = read_le<float>(in);
        ck.arrays.push_back(std::move(arr));
    }
    char trailer[4];
    in.read(trailer, sizeof trailer);
    if (!in || std::memcmp(trailer, kTrailer, sizeof kTrailer) != 0)
        throw std::runtime_error("checkpoint truncated");
    return ck;
}

}  // namespace reloc::nets
