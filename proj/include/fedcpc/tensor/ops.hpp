#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "fedcpc/tensor/tape.hpp"

// Differentiable operations. Every op checks its shapes up front and throws
// InvalidShape on mismatch; results are recorded on the inputs' tape.
namespace fedcpc::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);

Var reshape(Var a, Shape shape);
Var transpose(Var a);
// out.shape[i] = a.shape[perm[i]] for a rank-3 tensor.
Var permute3(Var a, std::array<std::size_t, 3> perm);
// Rows [start, start + count) of a 2-D tensor; rows outside the input read as zero.
Var slice_rows(Var a, std::ptrdiff_t start, std::size_t count);

// x: [N x in] or [in]; weight: [out x in]; bias: [out] or unbound. Returns [N x out] or [out].
Var linear(Var x, Var weight, Var bias = {});
Var matmul(Var a, Var b);

// input [C_in x L], weight [C_out x C_in x K], bias [C_out] or unbound -> [C_out x L_out]
Var conv1d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);
// input [C_in x H x W], weight [C_out x C_in x kh x kw], stride 1 -> [C_out x H' x W']
Var conv2d(Var input, Var weight, Var bias, std::size_t padding);
// 2x2 window, stride 2, ceil rounding: [C x H x W] -> [C x ceil(H/2) x ceil(W/2)]
Var maxpool2d(Var input);

// Along the last axis of a 1-D or 2-D tensor.
Var log_softmax(Var logits);
// Mean negative log-likelihood. log_probs: [C] with one label, or [N x C] with N labels.
Var nll_loss(Var log_probs, const std::vector<std::size_t>& labels);

struct GruWeights {
    Var w_ih; // [3H x D], gate order r, z, n
    Var w_hh; // [3H x H]
    Var b_ih; // [3H]
    Var b_hh; // [3H]
};

// h_t = (1 - z) * n + z * h_{t-1} with
//   r = sigma(W_ir x + b_ir + W_hr h + b_hr), z = sigma(W_iz x + b_iz + W_hz h + b_hz),
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn)).
// inputs [T x D], h0 [H]. Returns all hidden states [T x H].
Var gru(Var inputs, Var h0, const GruWeights& w);

struct LstmWeights {
    Var w_ih; // [4H x D], gate order i, f, g, o
    Var w_hh; // [4H x H]
    Var b_ih; // [4H]
    Var b_hh; // [4H]
};

// Standard LSTM; inputs [T x D], h0 and c0 [H]. Returns all hidden states [T x H].
Var lstm(Var inputs, Var h0, Var c0, const LstmWeights& w);

} // namespace fedcpc::ops
