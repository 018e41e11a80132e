#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "reloc/kernels.hpp"

using namespace reloc;
using namespace reloc::kernels;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a.v[i] != b.v[i]) return false;
    return true;
}

std::vector<double> rand_bias(Rng& rng, int n) {
    std::vector<double> b(n);
    for (double& e : b) e = rng.uniform(-0.5, 0.5);
    return b;
}

}  // namespace

TEST_CASE("conv2d: omp variant is bitwise identical to the serial reference") {
    Rng rng(7);
    struct Cfg {
        int n, ci, co, h, w, k, stride, pad;
    };
    const Cfg cfgs[] = {
        {1, 3, 8, 16, 16, 3, 1, 1},
        {2, 4, 6, 15, 17, 3, 1, 1},
        {2, 3, 8, 16, 16, 4, 2, 1},
        {1, 2, 5, 9, 9, 1, 1, 0},
    };
    for (const Cfg& c : cfgs) {
        const Tensor in = oracles::rand_tensor(rng, c.n, c.ci, c.h, c.w, -1.0, 1.0);
        const Tensor w = oracles::rand_tensor(rng, c.co, c.ci, c.k, c.k, -0.5, 0.5);
        const auto b = rand_bias(rng, c.co);
        const ConvShape cs{c.stride, c.pad};

        const Tensor out_s = conv2d_forward_serial(in, w, b, cs);
        const Tensor out_p = conv2d_forward_omp(in, w, b, cs);
        CHECK(bitwise_equal(out_s, out_p));

        const Tensor gout = oracles::rand_tensor(rng, out_s.n, out_s.c, out_s.h, out_s.w, -1.0, 1.0);
        CHECK(bitwise_equal(conv2d_backward_input_serial(gout, w, c.h, c.w, cs),
                            conv2d_backward_input_omp(gout, w, c.h, c.w, cs)));

        Tensor gw_s(c.co, c.ci, c.k, c.k), gw_p(c.co, c.ci, c.k, c.k);
        std::vector<double> gb_s(c.co, 0.0), gb_p(c.co, 0.0);
        conv2d_backward_params_serial(gout, in, cs, gw_s, gb_s);
        conv2d_backward_params_omp(gout, in, cs, gw_p, gb_p);
        CHECK(bitwise_equal(gw_s, gw_p));
        CHECK(gb_s == gb_p);
    }
}

TEST_CASE("elementwise kernels: omp matches serial bitwise") {
    Rng rng(11);
    const Tensor x = oracles::rand_tensor(rng, 2, 3, 12, 14, -2.0, 2.0);
    const Tensor gy = oracles::rand_tensor(rng, 2, 3, 12, 14, -1.0, 1.0);

    CHECK(bitwise_equal(leaky_relu_forward_serial(x, 0.2), leaky_relu_forward_omp(x, 0.2)));
    CHECK(bitwise_equal(leaky_relu_backward_serial(x, gy, 0.2),
                        leaky_relu_backward_omp(x, gy, 0.2)));
    const Tensor y = sigmoid_forward_serial(x);
    CHECK(bitwise_equal(y, sigmoid_forward_omp(x)));
    CHECK(bitwise_equal(sigmoid_backward_serial(y, gy), sigmoid_backward_omp(y, gy)));

    const Tensor even = oracles::rand_tensor(rng, 2, 4, 12, 16, -1.0, 1.0);
    const Tensor pooled_s = avgpool2_forward_serial(even);
    CHECK(bitwise_equal(pooled_s, avgpool2_forward_omp(even)));
    const Tensor gp = oracles::rand_tensor(rng, 2, 4, 6, 8, -1.0, 1.0);
    CHECK(bitwise_equal(avgpool2_backward_serial(gp, 12, 16), avgpool2_backward_omp(gp, 12, 16)));

    CHECK(bitwise_equal(upsample_nn2_forward_serial(pooled_s), upsample_nn2_forward_omp(pooled_s)));
    const Tensor gu = oracles::rand_tensor(rng, 2, 4, 12, 16, -1.0, 1.0);
    CHECK(bitwise_equal(upsample_nn2_backward_serial(gu), upsample_nn2_backward_omp(gu)));
}

TEST_CASE("kernel semantics on hand-checked grids") {
    Tensor x(1, 1, 2, 2);
    x.v = {1.0, 2.0, 3.0, 4.0};

    const Tensor up = upsample_nn2_forward(x);
    CHECK(up.h == 4);
    CHECK(up.at(0, 0, 0, 0) == 1.0);
    CHECK(up.at(0, 0, 0, 1) == 1.0);
    CHECK(up.at(0, 0, 1, 1) == 1.0);
    CHECK(up.at(0, 0, 0, 2) == 2.0);
    CHECK(up.at(0, 0, 3, 3) == 4.0);

    const Tensor pooled = avgpool2_forward(x);
    CHECK(pooled.h == 1);
    CHECK(pooled.at(0, 0, 0, 0) == doctest::Approx(2.5));

    Tensor in(1, 1, 3, 3);
    in.v = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    Tensor w(1, 1, 2, 2);
    w.v = {1, 0, 0, 1};
    const Tensor out = conv2d_forward(in, w, {1.0}, {1, 0});
    CHECK(out.h == 2);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(1 + 1 + 5));
    CHECK(out.at(0, 0, 1, 1) == doctest::Approx(1 + 5 + 9));
}

TEST_CASE("conv gradients match finite differences") {
    Rng rng(13);
    Tensor in = oracles::rand_tensor(rng, 1, 2, 6, 6, -1.0, 1.0);
    Tensor w = oracles::rand_tensor(rng, 3, 2, 3, 3, -0.5, 0.5);
    auto b = rand_bias(rng, 3);
    const ConvShape cs{1, 1};
    const Tensor weights = oracles::rand_tensor(rng, 1, 3, 6, 6, -1.0, 1.0);

    auto scalar = [&]() {
        const Tensor out = conv2d_forward_serial(in, w, b, cs);
        double s = 0.0;
        for (size_t i = 0; i < out.size(); ++i) s += out.v[i] * weights.v[i];
        return s;
    };

    const Tensor gin = conv2d_backward_input(weights, w, 6, 6, cs);
    Tensor gw(3, 2, 3, 3);
    std::vector<double> gb(3, 0.0);
    conv2d_backward_params(weights, in, cs, gw, gb);

    for (size_t i = 0; i < in.size(); i += 7) {
        const double fd = oracles::central_diff(scalar, &in.v[i], 1e-6);
        CHECK(oracles::rel_err(fd, gin.v[i]) < 1e-6);
    }
    for (size_t i = 0; i < w.size(); i += 5) {
        const double fd = oracles::central_diff(scalar, &w.v[i], 1e-6);
        CHECK(oracles::rel_err(fd, gw.v[i]) < 1e-6);
    }
    for (size_t i = 0; i < b.size(); ++i) {
        const double fd = oracles::central_diff(scalar, &b[i], 1e-6);
        CHECK(oracles::rel_err(fd, gb[i]) < 1e-6);
    }
}

TEST_CASE("shape validation") {
    CHECK_THROWS_AS(conv_out_extent(5, 4, 2, 0), std::invalid_argument);
    CHECK(conv_out_extent(600, 512, 1, 0) == 89);
    Tensor odd(1, 1, 3, 4);
    CHECK_THROWS_AS(avgpool2_forward(odd), std::invalid_argument);
}

TEST_CASE("concat/split channel round trip") {
    Rng rng(17);
    const Tensor a = oracles::rand_tensor(rng, 2, 3, 5, 5, -1.0, 1.0);
    const Tensor b = oracles::rand_tensor(rng, 2, 2, 5, 5, -1.0, 1.0);
    const Tensor cat = concat_channels(a, b);
    CHECK(cat.c == 5);
    Tensor ra, rb;
    split_channels(cat, 3, ra, rb);
    CHECK(bitwise_equal(ra, a));
    CHECK(bitwise_equal(rb, b));
}
