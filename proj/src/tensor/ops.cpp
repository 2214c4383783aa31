#include "fedcpc/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "fedcpc/tensor/kernels.hpp"

namespace fedcpc::ops {

namespace k = fedcpc::kernels;

namespace {

template <class T>
std::span<const T> val(const Tape& t, Var v) {
    return t.value(v).template data<T>();
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidShape(msg);
}

void require_bound(Var v, const char* what) {
    if (!v.valid()) throw ContractViolation(std::string(what) + " is unbound");
}

Tape& tape_of(Var v) {
    require_bound(v, "op input");
    return v.tape();
}

template <class T>
inline T sigmoid_of(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Adds the rows of m [rows x cols] to acc [cols] in row order.
template <class T>
void accumulate_rows(std::size_t rows, std::size_t cols, const T* m, T* acc) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) acc[j] += m[r * cols + j];
}

template <class F>
Var elementwise_binary(Var a, Var b, F&& body) {
    require(a.shape() == b.shape(),
            "elementwise shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    return body();
}

} // namespace

Var add(Var a, Var b) {
    return elementwise_binary(a, b, [&] {
        Tape& t = tape_of(a);
        return dispatch(a.dtype(), [&]<class T>() {
            Tensor out(a.shape(), a.dtype());
            auto o = out.data<T>();
            auto x = val<T>(t, a), y = val<T>(t, b);
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
            return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var out) {
                auto g = t.grad<T>(out);
                for (Var in : {a, b})
                    if (t.needs_grad(in)) {
                        auto gi = t.grad<T>(in);
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                    }
            });
        });
    });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
    return elementwise_binary(a, b, [&] {
        Tape& t = tape_of(a);
        return dispatch(a.dtype(), [&]<class T>() {
            Tensor out(a.shape(), a.dtype());
            auto o = out.data<T>();
            auto x = val<T>(t, a), y = val<T>(t, b);
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
            return t.record(std::move(out), {a, b}, [a, b](Tape& t, Var out) {
                auto g = t.grad<T>(out);
                auto x = val<T>(t, a), y = val<T>(t, b);
                if (t.needs_grad(a)) {
                    auto ga = t.grad<T>(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                }
                if (t.needs_grad(b)) {
                    auto gb = t.grad<T>(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                }
            });
        });
    });
}

Var scale(Var a, double factor) {
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out(a.shape(), a.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, a);
        const T f = static_cast<T>(factor);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * f;
        return t.record(std::move(out), {a}, [a, f](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
        });
    });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        T acc = 0;
        for (T v : val<T>(t, a)) acc += v;
        Tensor out = Tensor::from<T>({1}, {acc});
        return t.record(std::move(out), {a}, [a](Tape& t, Var out) {
            const T g = t.grad<T>(out)[0];
            for (auto& v : t.grad<T>(a)) v += g;
        });
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var relu(Var a) {
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out(a.shape(), a.dtype());
        k::relu<T>(out.numel(), val<T>(t, a).data(), out.data<T>().data());
        return t.record(std::move(out), {a}, [a](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto y = val<T>(t, out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (y[i] > T(0)) ga[i] += g[i];
        });
    });
}

Var sigmoid(Var a) {
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out(a.shape(), a.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, a);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_of(x[i]);
        return t.record(std::move(out), {a}, [a](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto y = val<T>(t, out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
        });
    });
}

Var tanh(Var a) {
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out(a.shape(), a.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, a);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
        return t.record(std::move(out), {a}, [a](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto y = val<T>(t, out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
        });
    });
}

Var reshape(Var a, Shape shape) {
    Tape& t = tape_of(a);
    Tensor out = a.value().reshaped(std::move(shape));
    out.set_requires_grad(false);
    return dispatch(a.dtype(), [&]<class T>() {
        return t.record(std::move(out), {a}, [a](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    });
}

Var transpose(Var a) {
    require(a.shape().size() == 2, "transpose needs a 2-D tensor, got " + to_string(a.shape()));
    Tape& t = tape_of(a);
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out({cols, rows}, a.dtype());
        k::transpose<T>(rows, cols, val<T>(t, a).data(), out.data<T>().data());
        return t.record(std::move(out), {a}, [a, rows, cols](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto ga = t.grad<T>(a);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j * rows + i];
        });
    });
}

Var permute3(Var a, std::array<std::size_t, 3> perm) {
    require(a.shape().size() == 3, "permute3 needs a 3-D tensor, got " + to_string(a.shape()));
    {
        auto sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        require(sorted == std::array<std::size_t, 3>{0, 1, 2}, "permute3: not a permutation");
    }
    Tape& t = tape_of(a);
    const Shape in = a.shape();
    const Shape out_shape{in[perm[0]], in[perm[1]], in[perm[2]]};
    const std::array<std::size_t, 3> in_strides{in[1] * in[2], in[2], 1};
    // Flat input offset of each output element.
    auto index = std::make_shared<std::vector<std::size_t>>(a.numel());
    {
        std::size_t n = 0;
        for (std::size_t i = 0; i < out_shape[0]; ++i)
            for (std::size_t j = 0; j < out_shape[1]; ++j)
                for (std::size_t l = 0; l < out_shape[2]; ++l)
                    (*index)[n++] = i * in_strides[perm[0]] + j * in_strides[perm[1]] + l * in_strides[perm[2]];
    }
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out(out_shape, a.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, a);
        for (std::size_t n = 0; n < o.size(); ++n) o[n] = x[(*index)[n]];
        return t.record(std::move(out), {a}, [a, index](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto ga = t.grad<T>(a);
            for (std::size_t n = 0; n < g.size(); ++n) ga[(*index)[n]] += g[n];
        });
    });
}

Var slice_rows(Var a, std::ptrdiff_t start, std::size_t count) {
    require(a.shape().size() == 2, "slice_rows needs a 2-D tensor, got " + to_string(a.shape()));
    Tape& t = tape_of(a);
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(a.shape()[0]);
    const std::size_t cols = a.shape()[1];
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out({count, cols}, a.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, a);
        for (std::size_t r = 0; r < count; ++r) {
            std::ptrdiff_t src = start + static_cast<std::ptrdiff_t>(r);
            if (src < 0 || src >= rows) continue;
            std::copy_n(x.begin() + src * cols, cols, o.begin() + r * cols);
        }
        return t.record(std::move(out), {a}, [a, start, count, rows, cols](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto ga = t.grad<T>(a);
            for (std::size_t r = 0; r < count; ++r) {
                std::ptrdiff_t src = start + static_cast<std::ptrdiff_t>(r);
                if (src < 0 || src >= rows) continue;
                for (std::size_t j = 0; j < cols; ++j) ga[src * cols + j] += g[r * cols + j];
            }
        });
    });
}

Var linear(Var x, Var weight, Var bias) {
    require(weight.shape().size() == 2, "linear weight must be 2-D, got " + to_string(weight.shape()));
    const std::size_t out_f = weight.shape()[0], in_f = weight.shape()[1];
    const bool vector_in = x.shape().size() == 1;
    require(vector_in || x.shape().size() == 2, "linear input must be 1-D or 2-D");
    const std::size_t n = vector_in ? 1 : x.shape()[0];
    const std::size_t xin = vector_in ? x.shape()[0] : x.shape()[1];
    require(xin == in_f, "linear: input features " + std::to_string(xin) + " != weight in_features " +
                             std::to_string(in_f));
    if (bias.valid()) require(bias.shape() == Shape{out_f}, "linear bias shape " + to_string(bias.shape()));
    Tape& t = tape_of(x);
    return dispatch(x.dtype(), [&]<class T>() {
        Tensor out(vector_in ? Shape{out_f} : Shape{n, out_f}, x.dtype());
        T* y = out.data<T>().data();
        k::gemm_nt<T>(n, out_f, in_f, val<T>(t, x).data(), val<T>(t, weight).data(), y, false);
        if (bias.valid()) {
            auto b = val<T>(t, bias);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < out_f; ++j) y[r * out_f + j] += b[j];
        }
        return t.record(std::move(out), {x, weight, bias}, [=](Tape& t, Var out) {
            const T* g = t.grad<T>(out).data();
            if (t.needs_grad(x))
                k::gemm_nn<T>(n, in_f, out_f, g, val<T>(t, weight).data(), t.grad<T>(x).data(), true);
            if (t.needs_grad(weight))
                k::gemm_tn<T>(out_f, in_f, n, g, val<T>(t, x).data(), t.grad<T>(weight).data(), true);
            if (bias.valid() && t.needs_grad(bias)) accumulate_rows(n, out_f, g, t.grad<T>(bias).data());
        });
    });
}

Var matmul(Var a, Var b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
            "matmul shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
    const std::size_t m = a.shape()[0], kd = a.shape()[1], n = b.shape()[1];
    Tape& t = tape_of(a);
    return dispatch(a.dtype(), [&]<class T>() {
        Tensor out({m, n}, a.dtype());
        k::gemm_nn<T>(m, n, kd, val<T>(t, a).data(), val<T>(t, b).data(), out.data<T>().data(), false);
        return t.record(std::move(out), {a, b}, [=](Tape& t, Var out) {
            const T* g = t.grad<T>(out).data();
            if (t.needs_grad(a)) k::gemm_nt<T>(m, kd, n, g, val<T>(t, b).data(), t.grad<T>(a).data(), true);
            if (t.needs_grad(b)) k::gemm_tn<T>(kd, n, m, val<T>(t, a).data(), g, t.grad<T>(b).data(), true);
        });
    });
}

Var conv1d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
    require(input.shape().size() == 2, "conv1d input must be [C_in x L], got " + to_string(input.shape()));
    require(weight.shape().size() == 3, "conv1d weight must be [C_out x C_in x K], got " + to_string(weight.shape()));
    const std::size_t c_out = weight.shape()[0], c_in = weight.shape()[1], kernel = weight.shape()[2];
    require(input.shape()[0] == c_in, "conv1d: input has " + std::to_string(input.shape()[0]) +
                                          " channels, weight expects " + std::to_string(c_in));
    if (stride < 1) throw ContractViolation("conv1d stride must be >= 1");
    const std::size_t length = input.shape()[1];
    require(length + 2 * padding >= kernel, "conv1d: input length " + std::to_string(length) +
                                                " too short for kernel " + std::to_string(kernel));
    if (bias.valid()) require(bias.shape() == Shape{c_out}, "conv1d bias shape " + to_string(bias.shape()));
    const k::Conv1dGeometry geo{c_in, length, kernel, stride, padding};
    const std::size_t lo = geo.out_length(), ck = c_in * kernel;
    Tape& t = tape_of(input);
    return dispatch(input.dtype(), [&]<class T>() {
        auto cols = std::make_shared<std::vector<T>>(ck * lo);
        k::im2col_1d<T>(geo, val<T>(t, input).data(), cols->data());
        Tensor out({c_out, lo}, input.dtype());
        T* y = out.data<T>().data();
        k::gemm_nn<T>(c_out, lo, ck, val<T>(t, weight).data(), cols->data(), y, false);
        if (bias.valid()) k::add_row_bias<T>(c_out, lo, val<T>(t, bias).data(), y);
        return t.record(std::move(out), {input, weight, bias}, [=](Tape& t, Var out) {
            const T* g = t.grad<T>(out).data();
            if (t.needs_grad(weight)) k::gemm_nt<T>(c_out, ck, lo, g, cols->data(), t.grad<T>(weight).data(), true);
            if (bias.valid() && t.needs_grad(bias)) k::row_sums<T>(c_out, lo, g, t.grad<T>(bias).data());
            if (t.needs_grad(input)) {
                std::vector<T> dcols(ck * lo);
                k::gemm_tn<T>(ck, lo, c_out, val<T>(t, weight).data(), g, dcols.data(), false);
                k::col2im_1d<T>(geo, dcols.data(), t.grad<T>(input).data());
            }
        });
    });
}

Var conv2d(Var input, Var weight, Var bias, std::size_t padding) {
    require(input.shape().size() == 3, "conv2d input must be [C x H x W], got " + to_string(input.shape()));
    require(weight.shape().size() == 4, "conv2d weight must be 4-D, got " + to_string(weight.shape()));
    const std::size_t c_out = weight.shape()[0], c_in = weight.shape()[1];
    const std::size_t kh = weight.shape()[2], kw = weight.shape()[3];
    require(input.shape()[0] == c_in, "conv2d: input has " + std::to_string(input.shape()[0]) +
                                          " channels, weight expects " + std::to_string(c_in));
    const std::size_t h = input.shape()[1], w = input.shape()[2];
    require(h + 2 * padding >= kh && w + 2 * padding >= kw, "conv2d: input smaller than kernel");
    if (bias.valid()) require(bias.shape() == Shape{c_out}, "conv2d bias shape " + to_string(bias.shape()));
    const k::Conv2dGeometry geo{c_in, h, w, kh, kw, padding};
    const std::size_t ho = geo.out_height(), wo = geo.out_width(), ckk = c_in * kh * kw, hw = ho * wo;
    Tape& t = tape_of(input);
    return dispatch(input.dtype(), [&]<class T>() {
        auto cols = std::make_shared<std::vector<T>>(ckk * hw);
        k::im2col_2d<T>(geo, val<T>(t, input).data(), cols->data());
        Tensor out({c_out, ho, wo}, input.dtype());
        T* y = out.data<T>().data();
        k::gemm_nn<T>(c_out, hw, ckk, val<T>(t, weight).data(), cols->data(), y, false);
        if (bias.valid()) k::add_row_bias<T>(c_out, hw, val<T>(t, bias).data(), y);
        return t.record(std::move(out), {input, weight, bias}, [=](Tape& t, Var out) {
            const T* g = t.grad<T>(out).data();
            if (t.needs_grad(weight)) k::gemm_nt<T>(c_out, ckk, hw, g, cols->data(), t.grad<T>(weight).data(), true);
            if (bias.valid() && t.needs_grad(bias)) k::row_sums<T>(c_out, hw, g, t.grad<T>(bias).data());
            if (t.needs_grad(input)) {
                std::vector<T> dcols(ckk * hw);
                k::gemm_tn<T>(ckk, hw, c_out, val<T>(t, weight).data(), g, dcols.data(), false);
                k::col2im_2d<T>(geo, dcols.data(), t.grad<T>(input).data());
            }
        });
    });
}

Var maxpool2d(Var input) {
    require(input.shape().size() == 3, "maxpool2d input must be [C x H x W], got " + to_string(input.shape()));
    const std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    Tape& t = tape_of(input);
    return dispatch(input.dtype(), [&]<class T>() {
        Tensor out({c, (h + 1) / 2, (w + 1) / 2}, input.dtype());
        auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
        k::maxpool2x2<T>(c, h, w, val<T>(t, input).data(), out.data<T>().data(), argmax->data());
        return t.record(std::move(out), {input}, [input, argmax](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto gi = t.grad<T>(input);
            for (std::size_t i = 0; i < g.size(); ++i) gi[(*argmax)[i]] += g[i];
        });
    });
}

Var log_softmax(Var logits) {
    const auto& s = logits.shape();
    require(s.size() == 1 || s.size() == 2, "log_softmax needs a 1-D or 2-D tensor");
    const std::size_t rows = s.size() == 1 ? 1 : s[0], cols = s.back();
    Tape& t = tape_of(logits);
    return dispatch(logits.dtype(), [&]<class T>() {
        Tensor out(s, logits.dtype());
        auto o = out.data<T>();
        auto x = val<T>(t, logits);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * cols;
            T m = *std::max_element(xr, xr + cols);
            T acc = 0;
            for (std::size_t j = 0; j < cols; ++j) acc += std::exp(xr[j] - m);
            const T lse = m + std::log(acc);
            for (std::size_t j = 0; j < cols; ++j) o[r * cols + j] = xr[j] - lse;
        }
        return t.record(std::move(out), {logits}, [logits, rows, cols](Tape& t, Var out) {
            auto g = t.grad<T>(out);
            auto y = val<T>(t, out);
            auto gx = t.grad<T>(logits);
            for (std::size_t r = 0; r < rows; ++r) {
                T gsum = 0;
                for (std::size_t j = 0; j < cols; ++j) gsum += g[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    gx[r * cols + j] += g[r * cols + j] - std::exp(y[r * cols + j]) * gsum;
            }
        });
    });
}

Var nll_loss(Var log_probs, const std::vector<std::size_t>& labels) {
    const auto& s = log_probs.shape();
    require(s.size() == 1 || s.size() == 2, "nll_loss needs a 1-D or 2-D tensor");
    const std::size_t rows = s.size() == 1 ? 1 : s[0], cols = s.back();
    require(labels.size() == rows, "nll_loss: " + std::to_string(labels.size()) + " labels for " +
                                       std::to_string(rows) + " rows");
    for (auto l : labels)
        if (l >= cols) throw ContractViolation("nll_loss: label " + std::to_string(l) + " out of range");
    Tape& t = tape_of(log_probs);
    return dispatch(log_probs.dtype(), [&]<class T>() {
        auto x = val<T>(t, log_probs);
        T acc = 0;
        for (std::size_t r = 0; r < rows; ++r) acc -= x[r * cols + labels[r]];
        const T inv = T(1) / static_cast<T>(rows);
        Tensor out = Tensor::from<T>({1}, {acc * inv});
        return t.record(std::move(out), {log_probs}, [log_probs, labels, cols, inv](Tape& t, Var out) {
            const T g = t.grad<T>(out)[0];
            auto gx = t.grad<T>(log_probs);
            for (std::size_t r = 0; r < labels.size(); ++r) gx[r * cols + labels[r]] -= g * inv;
        });
    });
}

namespace {

struct RecurrentShape {
    std::size_t steps, in_dim, hidden;
};

RecurrentShape check_recurrent(Var inputs, Var h0, Var w_ih, Var w_hh, Var b_ih, Var b_hh, std::size_t gates,
                               const char* name) {
    for (Var v : {inputs, h0, w_ih, w_hh, b_ih, b_hh}) require_bound(v, name);
    require(inputs.shape().size() == 2, std::string(name) + " inputs must be [T x D], got " +
                                            to_string(inputs.shape()));
    const std::size_t steps = inputs.shape()[0], in_dim = inputs.shape()[1];
    if (steps == 0) throw InvalidShape(std::string(name) + ": empty sequence");
    require(h0.shape().size() == 1, std::string(name) + " initial state must be 1-D");
    const std::size_t hidden = h0.shape()[0];
    require(w_ih.shape() == Shape{gates * hidden, in_dim}, std::string(name) + " w_ih shape " +
                                                                 to_string(w_ih.shape()));
    require(w_hh.shape() == Shape{gates * hidden, hidden}, std::string(name) + " w_hh shape " +
                                                                 to_string(w_hh.shape()));
    require(b_ih.shape() == Shape{gates * hidden} && b_hh.shape() == Shape{gates * hidden},
            std::string(name) + " bias shapes");
    return {steps, in_dim, hidden};
}

} // namespace

Var gru(Var inputs, Var h0, const GruWeights& w) {
    const auto [steps, in_dim, hidden] = check_recurrent(inputs, h0, w.w_ih, w.w_hh, w.b_ih, w.b_hh, 3, "gru");
    const std::size_t g3 = 3 * hidden;
    Tape& t = tape_of(inputs);
    return dispatch(inputs.dtype(), [&]<class T>() {
        // Per step: r, z, n and the recurrent candidate term (W_hn h + b_hn).
        auto saved = std::make_shared<std::vector<T>>(steps * 4 * hidden);
        std::vector<T> gx(steps * g3);
        k::gemm_nt<T>(steps, g3, in_dim, val<T>(t, inputs).data(), val<T>(t, w.w_ih).data(), gx.data(), false);
        {
            auto b = val<T>(t, w.b_ih);
            for (std::size_t s = 0; s < steps; ++s)
                for (std::size_t j = 0; j < g3; ++j) gx[s * g3 + j] += b[j];
        }
        std::vector<T> whh_t(hidden * g3);
        k::transpose<T>(g3, hidden, val<T>(t, w.w_hh).data(), whh_t.data());
        auto bhh = val<T>(t, w.b_hh);

        Tensor out({steps, hidden}, inputs.dtype());
        auto hs = out.data<T>();
        std::vector<T> gh(g3);
        const T* h_prev = val<T>(t, h0).data();
        for (std::size_t s = 0; s < steps; ++s) {
            k::gemm_nn<T>(1, g3, hidden, h_prev, whh_t.data(), gh.data(), false);
            T* sv = saved->data() + s * 4 * hidden;
            T* h = hs.data() + s * hidden;
            const T* x = gx.data() + s * g3;
            for (std::size_t j = 0; j < hidden; ++j) {
                const T r = sigmoid_of(x[j] + gh[j] + bhh[j]);
                const T z = sigmoid_of(x[hidden + j] + gh[hidden + j] + bhh[hidden + j]);
                const T hn = gh[2 * hidden + j] + bhh[2 * hidden + j];
                const T n = std::tanh(x[2 * hidden + j] + r * hn);
                sv[j] = r;
                sv[hidden + j] = z;
                sv[2 * hidden + j] = n;
                sv[3 * hidden + j] = hn;
                h[j] = (T(1) - z) * n + z * h_prev[j];
            }
            h_prev = h;
        }

        return t.record(std::move(out), {inputs, h0, w.w_ih, w.w_hh, w.b_ih, w.b_hh},
                        [=, steps = steps, in_dim = in_dim, hidden = hidden](Tape& t, Var out) {
            auto g_out = t.grad<T>(out);
            auto hs = val<T>(t, out);
            auto h0v = val<T>(t, h0);
            auto whh = val<T>(t, w.w_hh);
            std::vector<T> d_gx(steps * g3), d_gh(steps * g3), dh(hidden, T(0)), dh_prev(hidden);
            for (std::size_t s = steps; s-- > 0;) {
                const T* sv = saved->data() + s * 4 * hidden;
                const T* hp = s ? hs.data() + (s - 1) * hidden : h0v.data();
                T* dgx = d_gx.data() + s * g3;
                T* dgh = d_gh.data() + s * g3;
                for (std::size_t j = 0; j < hidden; ++j) {
                    const T r = sv[j], z = sv[hidden + j], n = sv[2 * hidden + j], hn = sv[3 * hidden + j];
                    const T d = dh[j] + g_out[s * hidden + j];
                    const T dn_pre = d * (T(1) - z) * (T(1) - n * n);
                    const T dz_pre = d * (hp[j] - n) * z * (T(1) - z);
                    const T dr_pre = dn_pre * hn * r * (T(1) - r);
                    dgx[j] = dr_pre;
                    dgx[hidden + j] = dz_pre;
                    dgx[2 * hidden + j] = dn_pre;
                    dgh[j] = dr_pre;
                    dgh[hidden + j] = dz_pre;
                    dgh[2 * hidden + j] = dn_pre * r;
                    dh_prev[j] = d * z;
                }
                k::gemm_nn<T>(1, hidden, g3, dgh, whh.data(), dh_prev.data(), true);
                std::swap(dh, dh_prev);
            }
            if (t.needs_grad(h0)) {
                auto g = t.grad<T>(h0);
                for (std::size_t j = 0; j < hidden; ++j) g[j] += dh[j];
            }
            if (t.needs_grad(inputs))
                k::gemm_nn<T>(steps, in_dim, g3, d_gx.data(), val<T>(t, w.w_ih).data(), t.grad<T>(inputs).data(),
                              true);
            if (t.needs_grad(w.w_ih))
                k::gemm_tn<T>(g3, in_dim, steps, d_gx.data(), val<T>(t, inputs).data(), t.grad<T>(w.w_ih).data(),
                              true);
            if (t.needs_grad(w.b_ih)) accumulate_rows(steps, g3, d_gx.data(), t.grad<T>(w.b_ih).data());
            if (t.needs_grad(w.b_hh)) accumulate_rows(steps, g3, d_gh.data(), t.grad<T>(w.b_hh).data());
            if (t.needs_grad(w.w_hh)) {
                std::vector<T> h_prev_seq(steps * hidden);
                std::copy(h0v.begin(), h0v.end(), h_prev_seq.begin());
                std::copy(hs.begin(), hs.end() - hidden, h_prev_seq.begin() + hidden);
                k::gemm_tn<T>(g3, hidden, steps, d_gh.data(), h_prev_seq.data(), t.grad<T>(w.w_hh).data(), true);
            }
        });
    });
}

Var lstm(Var inputs, Var h0, Var c0, const LstmWeights& w) {
    const auto [steps, in_dim, hidden] = check_recurrent(inputs, h0, w.w_ih, w.w_hh, w.b_ih, w.b_hh, 4, "lstm");
    require_bound(c0, "lstm");
    require(c0.shape() == Shape{hidden}, "lstm c0 shape " + to_string(c0.shape()));
    const std::size_t g4 = 4 * hidden;
    Tape& t = tape_of(inputs);
    return dispatch(inputs.dtype(), [&]<class T>() {
        // Per step: i, f, g, o activations and the cell state c.
        auto saved = std::make_shared<std::vector<T>>(steps * 5 * hidden);
        std::vector<T> gx(steps * g4);
        k::gemm_nt<T>(steps, g4, in_dim, val<T>(t, inputs).data(), val<T>(t, w.w_ih).data(), gx.data(), false);
        {
            auto bi = val<T>(t, w.b_ih);
            auto bh = val<T>(t, w.b_hh);
            for (std::size_t s = 0; s < steps; ++s)
                for (std::size_t j = 0; j < g4; ++j) gx[s * g4 + j] += bi[j] + bh[j];
        }
        std::vector<T> whh_t(hidden * g4);
        k::transpose<T>(g4, hidden, val<T>(t, w.w_hh).data(), whh_t.data());

        Tensor out({steps, hidden}, inputs.dtype());
        auto hs = out.data<T>();
        std::vector<T> gh(g4);
        const T* h_prev = val<T>(t, h0).data();
        const T* c_prev = val<T>(t, c0).data();
        for (std::size_t s = 0; s < steps; ++s) {
            k::gemm_nn<T>(1, g4, hidden, h_prev, whh_t.data(), gh.data(), false);
            T* sv = saved->data() + s * 5 * hidden;
            T* h = hs.data() + s * hidden;
            const T* x = gx.data() + s * g4;
            for (std::size_t j = 0; j < hidden; ++j) {
                const T i = sigmoid_of(x[j] + gh[j]);
                const T f = sigmoid_of(x[hidden + j] + gh[hidden + j]);
                const T g = std::tanh(x[2 * hidden + j] + gh[2 * hidden + j]);
                const T o = sigmoid_of(x[3 * hidden + j] + gh[3 * hidden + j]);
                const T c = f * c_prev[j] + i * g;
                sv[j] = i;
                sv[hidden + j] = f;
                sv[2 * hidden + j] = g;
                sv[3 * hidden + j] = o;
                sv[4 * hidden + j] = c;
                h[j] = o * std::tanh(c);
            }
            h_prev = h;
            c_prev = sv + 4 * hidden;
        }

        return t.record(std::move(out), {inputs, h0, c0, w.w_ih, w.w_hh, w.b_ih, w.b_hh},
                        [=, steps = steps, in_dim = in_dim, hidden = hidden](Tape& t, Var out) {
            auto g_out = t.grad<T>(out);
            auto hs = val<T>(t, out);
            auto h0v = val<T>(t, h0);
            auto c0v = val<T>(t, c0);
            auto whh = val<T>(t, w.w_hh);
            std::vector<T> d_g(steps * g4), dh(hidden, T(0)), dc(hidden, T(0)), dh_prev(hidden);
            for (std::size_t s = steps; s-- > 0;) {
                const T* sv = saved->data() + s * 5 * hidden;
                const T* cp = s ? saved->data() + (s - 1) * 5 * hidden + 4 * hidden : c0v.data();
                T* dg = d_g.data() + s * g4;
                for (std::size_t j = 0; j < hidden; ++j) {
                    const T i = sv[j], f = sv[hidden + j], g = sv[2 * hidden + j], o = sv[3 * hidden + j];
                    const T tc = std::tanh(sv[4 * hidden + j]);
                    const T d = dh[j] + g_out[s * hidden + j];
                    const T dcell = dc[j] + d * o * (T(1) - tc * tc);
                    dg[j] = dcell * g * i * (T(1) - i);
                    dg[hidden + j] = dcell * cp[j] * f * (T(1) - f);
                    dg[2 * hidden + j] = dcell * i * (T(1) - g * g);
                    dg[3 * hidden + j] = d * tc * o * (T(1) - o);
                    dc[j] = dcell * f;
                    dh_prev[j] = 0;
                }
                k::gemm_nn<T>(1, hidden, g4, dg, whh.data(), dh_prev.data(), true);
                std::swap(dh, dh_prev);
            }
            if (t.needs_grad(h0)) {
                auto g = t.grad<T>(h0);
                for (std::size_t j = 0; j < hidden; ++j) g[j] += dh[j];
            }
            if (t.needs_grad(c0)) {
                auto g = t.grad<T>(c0);
                for (std::size_t j = 0; j < hidden; ++j) g[j] += dc[j];
            }
            if (t.needs_grad(inputs))
                k::gemm_nn<T>(steps, in_dim, g4, d_g.data(), val<T>(t, w.w_ih).data(), t.grad<T>(inputs).data(),
                              true);
            if (t.needs_grad(w.w_ih))
                k::gemm_tn<T>(g4, in_dim, steps, d_g.data(), val<T>(t, inputs).data(), t.grad<T>(w.w_ih).data(),
                              true);
            if (t.needs_grad(w.b_ih)) accumulate_rows(steps, g4, d_g.data(), t.grad<T>(w.b_ih).data());
            if (t.needs_grad(w.b_hh)) accumulate_rows(steps, g4, d_g.data(), t.grad<T>(w.b_hh).data());
            if (t.needs_grad(w.w_hh)) {
                std::vector<T> h_prev_seq(steps * hidden);
                std::copy(h0v.begin(), h0v.end(), h_prev_seq.begin());
                std::copy(hs.begin(), hs.end() - hidden, h_prev_seq.begin() + hidden);
                k::gemm_tn<T>(g4, hidden, steps, d_g.data(), h_prev_seq.data(), t.grad<T>(w.w_hh).data(), true);
            }
        });
    });
}

} // namespace fedcpc::ops
