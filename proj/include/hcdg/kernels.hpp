#pragma once

// Dense NCHW convolution kernels. The `parallel` namespace holds the
// OpenMP/vectorized implementations used by the network; `reference` holds a
// direct seven-loop serial version kept for testing and benchmarking.
// Both accumulate into their outputs in an order that does not depend on the
// thread count, so results are reproducible.

#include <span>

namespace hcdg::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
};

namespace parallel {

// out = conv(x, w) + b. `b` may be empty.
void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> out);

// Accumulates (+=) into dx, dw, db; any of them may be empty to skip it.
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace parallel

namespace reference {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> out);

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace reference

}  // namespace hcdg::kernels
