#pragma once

#include <cstdint>

namespace gridcast::kern {

// Dense NHWC kernels. Every kernel exists twice: a plain serial reference under
// kern::ref, and the OpenMP default entry point. The parallel versions only split
// loops over independent outputs and keep the per-output accumulation order identical
// to the reference, so both produce bit-equal results for any thread count.

struct Conv2dDims {
    std::int64_t n = 0;   // batch rows
    std::int64_t h = 0;   // height
    std::int64_t w = 0;   // width
    std::int64_t ci = 0;  // input channels
    std::int64_t co = 0;  // output channels
    std::int64_t k = 0;   // odd kernel size, same padding, stride 1
};

namespace ref {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d);
void conv2d_backward_input(const double* gy, const double* w, double* gx, const Conv2dDims& d);
void conv2d_backward_weights(const double* x, const double* gy, double* gw, const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

// Transposed convolution, kernel 2 stride 2: exact spatial doubling.
void convtr2_forward(const double* x, const double* w, const double* b, double* y,
                     std::int64_t n, std::int64_t h, std::int64_t w_in, std::int64_t ci,
                     std::int64_t co);
void convtr2_backward_input(const double* gy, const double* w, double* gx, std::int64_t n,
                            std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co);
void convtr2_backward_weights(const double* x, const double* gy, double* gw, std::int64_t n,
                              std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co);

// 2x2 max pooling, stride 2, even extents; ties keep the first index scanned.
void maxpool2_forward(const double* x, double* y, std::int32_t* argmax, std::int64_t n,
                      std::int64_t h, std::int64_t w, std::int64_t c);
void maxpool2_backward(const double* gy, const std::int32_t* argmax, double* gx, std::int64_t n,
                       std::int64_t h, std::int64_t w, std::int64_t c);

// y[b,o] = sum_i x[b,i] * w[i,o]
void matmul_forward(const double* x, const double* w, double* y, std::int64_t b, std::int64_t i,
                    std::int64_t o);
void matmul_backward_input(const double* gy, const double* w, double* gx, std::int64_t b,
                           std::int64_t i, std::int64_t o);
void matmul_backward_weights(const double* x, const double* gy, double* gw, std::int64_t b,
                             std::int64_t i, std::int64_t o);

// Per-channel sum and sum of squares over all rows/pixels (layout (rows, c)).
void channel_sums(const double* x, double* sum, double* sumsq, std::int64_t rows, std::int64_t c);
// Per-channel sum of gy and of gy*xhat; backbone of the batch-norm backward pass.
void channel_dot_sums(const double* gy, const double* xhat, double* sum_gy, double* sum_gy_xhat,
                      std::int64_t rows, std::int64_t c);

// Bilinear resize NHWC (half-pixel centers). Forward only: used on graph leaves.
void bilinear_resize(const double* x, double* y, std::int64_t n, std::int64_t h_in,
                     std::int64_t w_in, std::int64_t h_out, std::int64_t w_out, std::int64_t c);

}  // namespace ref

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d);
void conv2d_backward_input(const double* gy, const double* w, double* gx, const Conv2dDims& d);
void conv2d_backward_weights(const double* x, const double* gy, double* gw, const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

void convtr2_forward(const double* x, const double* w, const double* b, double* y, std::int64_t n,
                     std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co);
void convtr2_backward_input(const double* gy, const double* w, double* gx, std::int64_t n,
                            std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co);
void convtr2_backward_weights(const double* x, const double* gy, double* gw, std::int64_t n,
                              std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co);

void maxpool2_forward(const double* x, double* y, std::int32_t* argmax, std::int64_t n,
                      std::int64_t h, std::int64_t w, std::int64_t c);
void maxpool2_backward(const double* gy, const std::int32_t* argmax, double* gx, std::int64_t n,
                       std::int64_t h, std::int64_t w, std::int64_t c);

void matmul_forward(const double* x, const double* w, double* y, std::int64_t b, std::int64_t i,
                    std::int64_t o);
void matmul_backward_input(const double* gy, const double* w, double* gx, std::int64_t b,
                           std::int64_t i, std::int64_t o);
void matmul_backward_weights(const double* x, const double* gy, double* gw, std::int64_t b,
                             std::int64_t i, std::int64_t o);

void channel_sums(const double* x, double* sum, double* sumsq, std::int64_t rows, std::int64_t c);
void channel_dot_sums(const double* gy, const double* xhat, double* sum_gy, double* sum_gy_xhat,
                      std::int64_t rows, std::int64_t c);

void bilinear_resize(const double* x, double* y, std::int64_t n, std::int64_t h_in,
                     std::int64_t w_in, std::int64_t h_out, std::int64_t w_out, std::int64_t c);

}  // namespace gridcast::kern
