// Benchmark of the OpenMP kernels against their serial references on the
// convolution shapes the networks actually run.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "reloc/kernels.hpp"
#include "reloc/rng.hpp"

using namespace reloc;
using namespace reloc::kernels;
using h_clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
    fn();  // warmup
    const auto t0 = h_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = h_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void report(const char* name, double serial_ms, double omp_ms) {
    std::printf("%-28s serial %8.2f ms   omp %8.2f ms   speedup %.2fx\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    int n = 8, ci = 16, co = 16, hw = 64, k = 3, iters = 5, threads = 0;
    app.add_option("--n", n, "batch size");
    app.add_option("--ci", ci, "input channels");
    app.add_option("--co", co, "output channels");
    app.add_option("--hw", hw, "spatial extent");
    app.add_option("--k", k, "kernel size");
    app.add_option("--iters", iters, "timing iterations");
    app.add_option("--threads", threads, "OpenMP threads (0 = default)");
    CLI11_PARSE(app, argc, argv);

    if (threads > 0) omp_set_num_threads(threads);
    std::printf("conv %dx%dx%dx%d, k=%d, %d threads\n", n, ci, hw, hw, k,
                threads > 0 ? threads : omp_get_max_threads());

    Rng rng(1);
    Tensor in(n, ci, hw, hw), w(co, ci, k, k);
    std::vector<double> b(co, 0.1);
    for (double& e : in.v) e = rng.uniform();
    for (double& e : w.v) e = rng.uniform(-0.2, 0.2);
    const ConvShape cs{1, k / 2};

    const Tensor out = conv2d_forward_serial(in, w, b, cs);
    Tensor gout(out.n, out.c, out.h, out.w);
    for (double& e : gout.v) e = rng.uniform(-1.0, 1.0);

    report("conv2d_forward",
           time_ms([&] { conv2d_forward_serial(in, w, b, cs); }, iters),
           time_ms([&] { conv2d_forward_omp(in, w, b, cs); }, iters));

    report("conv2d_backward_input",
           time_ms([&] { conv2d_backward_input_serial(gout, w, hw, hw, cs); }, iters),
           time_ms([&] { conv2d_backward_input_omp(gout, w, hw, hw, cs); }, iters));

    Tensor gw(co, ci, k, k);
    std::vector<double> gb(co, 0.0);
    report("conv2d_backward_params",
           time_ms([&] { conv2d_backward_params_serial(gout, in, cs, gw, gb); }, iters),
           time_ms([&] { conv2d_backward_params_omp(gout, in, cs, gw, gb); }, iters));

    report("leaky_relu_forward",
           time_ms([&] { leaky_relu_forward_serial(in, 0.2); }, iters),
           time_ms([&] { leaky_relu_forward_omp(in, 0.2); }, iters));

    report("sigmoid_forward",
           time_ms([&] { sigmoid_forward_serial(in); }, iters),
           time_ms([&] { sigmoid_forward_omp(in); }, iters));

    report("avgpool2_forward",
           time_ms([&] { avgpool2_forward_serial(in); }, iters),
           time_ms([&] { avgpool2_forward_omp(in); }, iters));

    report("upsample_nn2_forward",
           time_ms([&] { upsample_nn2_forward_serial(in); }, iters),
           time_ms([&] { upsample_nn2_forward_omp(in); }, iters));
    return 0;
}
