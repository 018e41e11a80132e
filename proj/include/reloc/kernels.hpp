#pragma once

#include "reloc/tensor.hpp"

namespace reloc::kernels {

// Every kernel comes in two variants: a plain-loop serial reference and an
// OpenMP one. Both use the same per-output-element arithmetic order, so
// results are bitwise identical and the serial variant doubles as the test
// oracle for the parallel one. Dispatch goes through the active backend.
enum class Backend { Serial, OpenMP };

Backend& active_backend();

struct ConvShape {
    int stride = 1;
    int pad = 0;
};

int conv_out_extent(int in, int k, int stride, int pad);

// in [N,Ci,H,W] * w [Co,Ci,kh,kw] + b[Co] -> out [N,Co,Ho,Wo]
Tensor conv2d_forward_serial(const Tensor& in, const Tensor& w,
                             const std::vector<double>& b, ConvShape cs);
Tensor conv2d_forward_omp(const Tensor& in, const Tensor& w,
                          const std::vector<double>& b, ConvShape cs);
Tensor conv2d_forward(const Tensor& in, const Tensor& w,
                      const std::vector<double>& b, ConvShape cs);

Tensor conv2d_backward_input_serial(const Tensor& gout, const Tensor& w,
                                    int in_h, int in_w, ConvShape cs);
Tensor conv2d_backward_input_omp(const Tensor& gout, const Tensor& w,
                                 int in_h, int in_w, ConvShape cs);
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w,
                             int in_h, int in_w, ConvShape cs);

void conv2d_backward_params_serial(const Tensor& gout, const Tensor& in, ConvShape cs,
                                   Tensor& gw, std::vector<double>& gb);
void conv2d_backward_params_omp(const Tensor& gout, const Tensor& in, ConvShape cs,
                                Tensor& gw, std::vector<double>& gb);
void conv2d_backward_params(const Tensor& gout, const Tensor& in, ConvShape cs,
                            Tensor& gw, std::vector<double>& gb);

Tensor leaky_relu_forward_serial(const Tensor& x, double slope);
Tensor leaky_relu_forward_omp(const Tensor& x, double slope);
Tensor leaky_relu_forward(const Tensor& x, double slope);

Tensor leaky_relu_backward_serial(const Tensor& x, const Tensor& gy, double slope);
Tensor leaky_relu_backward_omp(const Tensor& x, const Tensor& gy, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& gy, double slope);

Tensor sigmoid_forward_serial(const Tensor& x);
Tensor sigmoid_forward_omp(const Tensor& x);
Tensor sigmoid_forward(const Tensor& x);

// gx from cached sigmoid output y
Tensor sigmoid_backward_serial(const Tensor& y, const Tensor& gy);
Tensor sigmoid_backward_omp(const Tensor& y, const Tensor& gy);
Tensor sigmoid_backward(const Tensor& y, const Tensor& gy);

// 2x2 average pooling, stride 2; input extents must be even.
Tensor avgpool2_forward_serial(const Tensor& x);
Tensor avgpool2_forward_omp(const Tensor& x);
Tensor avgpool2_forward(const Tensor& x);

Tensor avgpool2_backward_serial(const Tensor& gy, int in_h, int in_w);
Tensor avgpool2_backward_omp(const Tensor& gy, int in_h, int in_w);
Tensor avgpool2_backward(const Tensor& gy, int in_h, int in_w);

// Nearest-neighbor x2 upsampling.
Tensor upsample_nn2_forward_serial(const Tensor& x);
Tensor upsample_nn2_forward_omp(const Tensor& x);
Tensor upsample_nn2_forward(const Tensor& x);

Tensor upsample_nn2_backward_serial(const Tensor& gy);
Tensor upsample_nn2_backward_omp(const Tensor& gy);
Tensor upsample_nn2_backward(const Tensor& gy);

// Channel concatenation and its split.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

}  // namespace reloc::kernels
