#include "fedcpc/tensor/kernels.hpp"

#include <algorithm>
#include <vector>

namespace fedcpc::kernels {

namespace {

constexpr std::size_t kParallelWork = 1u << 15;

// Register tile: kRows rows of C by kCols<T> columns, accumulated over a
// k-range in ascending order.
constexpr std::size_t kRows = 4;
template <class T>
constexpr std::size_t kCols = 64 / sizeof(T);
constexpr std::size_t kDepth = 256;

template <class T>
inline void tile_full(std::size_t N, std::size_t K, std::size_t k0, std::size_t k1, const T* A, const T* B, T* C) {
    constexpr std::size_t W = kCols<T>;
    T acc[kRows][W];
    for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t j = 0; j < W; ++j) acc[r][j] = C[r * N + j];
    for (std::size_t k = k0; k < k1; ++k) {
        const T* b = B + k * N;
        const T a0 = A[k], a1 = A[K + k], a2 = A[2 * K + k], a3 = A[3 * K + k];
#pragma omp simd
        for (std::size_t j = 0; j < W; ++j) {
            acc[0][j] += a0 * b[j];
            acc[1][j] += a1 * b[j];
            acc[2][j] += a2 * b[j];
            acc[3][j] += a3 * b[j];
        }
    }
    for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t j = 0; j < W; ++j) C[r * N + j] = acc[r][j];
}

template <class T>
inline void tile_edge(std::size_t rows, std::size_t cols, std::size_t N, std::size_t K, std::size_t k0,
                      std::size_t k1, const T* A, const T* B, T* C) {
    for (std::size_t r = 0; r < rows; ++r) {
        T* c = C + r * N;
        const T* a = A + r * K;
        for (std::size_t k = k0; k < k1; ++k) {
            const T av = a[k];
            const T* b = B + k * N;
            for (std::size_t j = 0; j < cols; ++j) c[j] += av * b[j];
        }
    }
}

} // namespace

template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, T(0));
    if (M == 0 || N == 0 || K == 0) return;
    constexpr std::size_t W = kCols<T>;
    const std::size_t row_tiles = (M + kRows - 1) / kRows;
    const std::size_t col_tiles = (N + W - 1) / W;
    const bool parallel = M * N * K > kParallelWork;
    for (std::size_t k0 = 0; k0 < K; k0 += kDepth) {
        const std::size_t k1 = std::min(K, k0 + kDepth);
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
        for (std::size_t jt = 0; jt < col_tiles; ++jt)
            for (std::size_t it = 0; it < row_tiles; ++it) {
                const std::size_t i = it * kRows, j = jt * W;
                const std::size_t rows = std::min(kRows, M - i), cols = std::min(W, N - j);
                if (rows == kRows && cols == W)
                    tile_full(N, K, k0, k1, A + i * K, B + j, C + i * N + j);
                else
                    tile_edge(rows, cols, N, K, k0, k1, A + i * K, B + j, C + i * N + j);
            }
    }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
    constexpr std::size_t B = 32;
#pragma omp parallel for collapse(2) schedule(static) if (rows * cols > kParallelWork)
    for (std::size_t i0 = 0; i0 < rows; i0 += B)
        for (std::size_t j0 = 0; j0 < cols; j0 += B)
            for (std::size_t i = i0; i < std::min(rows, i0 + B); ++i)
                for (std::size_t j = j0; j < std::min(cols, j0 + B); ++j) out[j * rows + i] = in[i * cols + j];
}

template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    std::vector<T> at(M * K);
    transpose(K, M, A, at.data());
    gemm_nn(M, N, K, at.data(), B, C, accumulate);
}

template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    std::vector<T> bt(K * N);
    transpose(N, K, B, bt.data());
    gemm_nn(M, N, K, A, bt.data(), C, accumulate);
}

template <class T>
void im2col_1d(const Conv1dGeometry& g, const T* input, T* cols) {
    const std::size_t lo = g.out_length();
    const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(g.length);
#pragma omp parallel for collapse(2) schedule(static) if (g.in_channels * g.kernel * lo > kParallelWork)
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t k = 0; k < g.kernel; ++k) {
            T* row = cols + (c * g.kernel + k) * lo;
            const T* x = input + c * g.length;
            for (std::size_t o = 0; o < lo; ++o) {
                std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * g.stride + k) -
                                     static_cast<std::ptrdiff_t>(g.padding);
                row[o] = (pos >= 0 && pos < len) ? x[pos] : T(0);
            }
        }
}

template <class T>
void col2im_1d(const Conv1dGeometry& g, const T* cols, T* input_grad) {
    const std::size_t lo = g.out_length();
    const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(g.length);
    // Channels are independent; within a channel the (k, o) order is fixed.
#pragma omp parallel for schedule(static) if (g.in_channels * g.kernel * lo > kParallelWork)
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* x = input_grad + c * g.length;
        for (std::size_t k = 0; k < g.kernel; ++k) {
            const T* row = cols + (c * g.kernel + k) * lo;
            for (std::size_t o = 0; o < lo; ++o) {
                std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * g.stride + k) -
                                     static_cast<std::ptrdiff_t>(g.padding);
                if (pos >= 0 && pos < len) x[pos] += row[o];
            }
        }
    }
}

template <class T>
void im2col_2d(const Conv2dGeometry& g, const T* input, T* cols) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::ptrdiff_t h = g.height, w = g.width, pad = g.padding;
#pragma omp parallel for collapse(3) schedule(static) if (g.in_channels * g.kernel_h * g.kernel_w * ho * wo > kParallelWork)
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
            for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                T* row = cols + ((c * g.kernel_h + dy) * g.kernel_w + dx) * ho * wo;
                const T* x = input + c * g.height * g.width;
                for (std::size_t y = 0; y < ho; ++y) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - pad;
                    T* out = row + y * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + wo, T(0));
                        continue;
                    }
                    const T* xrow = x + iy * w;
                    for (std::size_t xo = 0; xo < wo; ++xo) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + dx) - pad;
                        out[xo] = (ix >= 0 && ix < w) ? xrow[ix] : T(0);
                    }
                }
            }
}

template <class T>
void col2im_2d(const Conv2dGeometry& g, const T* cols, T* input_grad) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::ptrdiff_t h = g.height, w = g.width, pad = g.padding;
#pragma omp parallel for schedule(static) if (g.in_channels * g.kernel_h * g.kernel_w * ho * wo > kParallelWork)
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* x = input_grad + c * g.height * g.width;
        for (std::size_t dy = 0; dy < g.kernel_h; ++dy)
            for (std::size_t dx = 0; dx < g.kernel_w; ++dx) {
                const T* row = cols + ((c * g.kernel_h + dy) * g.kernel_w + dx) * ho * wo;
                for (std::size_t y = 0; y < ho; ++y) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + dy) - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* xrow = x + iy * w;
                    const T* in = row + y * wo;
                    for (std::size_t xo = 0; xo < wo; ++xo) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + dx) - pad;
                        if (ix >= 0 && ix < w) xrow[ix] += in[xo];
                    }
                }
            }
    }
}

template <class T>
void add_row_bias(std::size_t rows, std::size_t cols, const T* bias, T* out) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (std::size_t r = 0; r < rows; ++r) {
        T* o = out + r * cols;
        const T b = bias[r];
        for (std::size_t j = 0; j < cols; ++j) o[j] += b;
    }
}

template <class T>
void row_sums(std::size_t rows, std::size_t cols, const T* grad, T* bias_grad) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = bias_grad[r];
        const T* g = grad + r * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += g[j];
        bias_grad[r] = acc;
    }
}

template <class T>
void maxpool2x2(std::size_t channels, std::size_t height, std::size_t width, const T* input, T* out,
                std::uint32_t* argmax) {
    const std::size_t ho = (height + 1) / 2, wo = (width + 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (channels * height * width > kParallelWork)
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                std::size_t best = (c * height + 2 * y) * width + 2 * x;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t iy = 2 * y + dy, ix = 2 * x + dx;
                        if (iy >= height || ix >= width) continue;
                        std::size_t idx = (c * height + iy) * width + ix;
                        if (input[idx] > input[best]) best = idx;
                    }
                out[(c * ho + y) * wo + x] = input[best];
                argmax[(c * ho + y) * wo + x] = static_cast<std::uint32_t>(best);
            }
}

template <class T>
void relu(std::size_t n, const T* in, T* out) {
#pragma omp parallel for simd schedule(static) if (n > kParallelWork)
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

#define FEDCPC_INSTANTIATE(T)                                                                                     \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);               \
    template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);               \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);               \
    template void transpose<T>(std::size_t, std::size_t, const T*, T*);                                          \
    template void im2col_1d<T>(const Conv1dGeometry&, const T*, T*);                                             \
    template void col2im_1d<T>(const Conv1dGeometry&, const T*, T*);                                             \
    template void im2col_2d<T>(const Conv2dGeometry&, const T*, T*);                                             \
    template void col2im_2d<T>(const Conv2dGeometry&, const T*, T*);                                             \
    template void add_row_bias<T>(std::size_t, std::size_t, const T*, T*);                                       \
    template void row_sums<T>(std::size_t, std::size_t, const T*, T*);                                           \
    template void maxpool2x2<T>(std::size_t, std::size_t, std::size_t, const T*, T*, std::uint32_t*);            \
    template void relu<T>(std::size_t, const T*, T*);

FEDCPC_INSTANTIATE(float)
FEDCPC_INSTANTIATE(double)

#undef FEDCPC_INSTANTIATE

} // namespace fedcpc::kernels
