#pragma once

// Serial, loop-for-loop reference implementations. Slow on purpose: these are
// the ground truth the parallel kernels are tested and benchmarked against.

#include <cstddef>
#include <cstdint>

#include "fedcpc/tensor/kernels.hpp"

namespace fedcpc::kernels::reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            T acc = accumulate ? C[i * N + j] : T(0);
            for (std::size_t k = 0; k < K; ++k) {
                T a = trans_a ? A[k * M + i] : A[i * K + k];
                T b = trans_b ? B[j * K + k] : B[k * N + j];
                acc += a * b;
            }
            C[i * N + j] = acc;
        }
}

// Direct convolution: out[o][t] = bias[o] + sum_{c,k} w[o][c][k] * x[c][t*stride + k - pad]
template <class T>
void conv1d(const Conv1dGeometry& g, std::size_t out_channels, const T* input, const T* weight, const T* bias,
            T* out) {
    const std::size_t lo = g.out_length();
    for (std::size_t o = 0; o < out_channels; ++o)
        for (std::size_t t = 0; t < lo; ++t) {
            T acc = 0;
            for (std::size_t c = 0; c < g.in_channels; ++c)
                for (std::size_t k = 0; k < g.kernel; ++k) {
                    std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * g.stride + k) -
                                         static_cast<std::ptrdiff_t>(g.padding);
                    if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
                    acc += weight[(o * g.in_channels + c) * g.kernel + k] * input[c * g.length + pos];
                }
            out[o * lo + t] = acc + (bias ? bias[o] : T(0));
        }
}

template <class T>
void conv2d(const Conv2dGeometry& g, std::size_t out_channels, const T* input, const T* weight, const T* bias,
            T* out) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    for (std::size_t o = 0; o < out_channels; ++o)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                T acc = 0;
                for (std::size_t c = 0; c < g.in_channels; ++c)
                    for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
                        for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - g.padding;
                            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + dx) - g.padding;
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                                ix >= static_cast<std::ptrdiff_t>(g.width))
                                continue;
                            acc += weight[((o * g.in_channels + c) * g.kernel_h + dy) * g.kernel_w + dx] *
                                   input[(c * g.height + iy) * g.width + ix];
                        }
                out[(o * ho + y) * wo + x] = acc + (bias ? bias[o] : T(0));
            }
}

template <class T>
void maxpool2x2(std::size_t channels, std::size_t height, std::size_t width, const T* input, T* out) {
    const std::size_t ho = (height + 1) / 2, wo = (width + 1) / 2;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                T best = input[(c * height + 2 * y) * width + 2 * x];
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t iy = 2 * y + dy, ix = 2 * x + dx;
                        if (iy < height && ix < width && input[(c * height + iy) * width + ix] > best)
                            best = input[(c * height + iy) * width + ix];
                    }
                out[(c * ho + y) * wo + x] = best;
            }
}

} // namespace fedcpc::kernels::reference
