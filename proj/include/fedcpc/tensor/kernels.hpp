#pragma once

// OpenMP-parallel numeric kernels used by the autodiff ops.
//
// Every kernel partitions work over independent output elements only; no
// reduction is ever split across threads, so each output value is produced by
// the same left-to-right accumulation regardless of the thread count. The
// serial versions in reference_kernels.hpp compute the same quantities with
// plain loops and are kept for tests and the benchmark.

#include <cstddef>
#include <cstdint>
#include <span>

namespace fedcpc::kernels {

// C[M x N] (+)= A[M x K] * B[K x N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);

// C[M x N] (+)= A^T * B with A stored K x M
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);

// C[M x N] (+)= A * B^T with B stored N x K
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate);

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

struct Conv1dGeometry {
    std::size_t in_channels, length, kernel, stride, padding;
    std::size_t out_length() const { return (length + 2 * padding - kernel) / stride + 1; }
};

// cols[(c*K + k) x Lo] = zero-padded input[c][o*stride + k - padding]
template <class T>
void im2col_1d(const Conv1dGeometry& g, const T* input, T* cols);
template <class T>
void col2im_1d(const Conv1dGeometry& g, const T* cols, T* input_grad);

struct Conv2dGeometry {
    std::size_t in_channels, height, width, kernel_h, kernel_w, padding;
    std::size_t out_height() const { return height + 2 * padding - kernel_h + 1; }
    std::size_t out_width() const { return width + 2 * padding - kernel_w + 1; }
};

// Stride-1 2-D patch extraction: cols[(c*kh*kw + dy*kw + dx) x (Ho*Wo)].
template <class T>
void im2col_2d(const Conv2dGeometry& g, const T* input, T* cols);
template <class T>
void col2im_2d(const Conv2dGeometry& g, const T* cols, T* input_grad);

// out[r][j] += bias[r]
template <class T>
void add_row_bias(std::size_t rows, std::size_t cols, const T* bias, T* out);
// bias_grad[r] += sum_j grad[r][j]
template <class T>
void row_sums(std::size_t rows, std::size_t cols, const T* grad, T* bias_grad);

// 2x2 stride-2 max pooling with ceil rounding; windows hanging off the edge
// pool over the elements that exist. argmax stores flat input offsets.
template <class T>
void maxpool2x2(std::size_t channels, std::size_t height, std::size_t width, const T* input, T* out,
                std::uint32_t* argmax);

template <class T>
void relu(std::size_t n, const T* in, T* out);

} // namespace fedcpc::kernels
