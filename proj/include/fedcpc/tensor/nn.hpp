#pragma once

#include <string>

#include "fedcpc/core/rng.hpp"
#include "fedcpc/tensor/ops.hpp"
#include "fedcpc/tensor/parameter_set.hpp"

// Layer bookkeeping: each layer registers its tensors in a ParameterSet under
// "<prefix>.<field>" and remembers their indices.
//
// Initialization: conv kernels use He-uniform bounds sqrt(6 / fan_in) (they feed
// ReLUs), dense and recurrent matrices use 1 / sqrt(fan_in); conv biases start
// at zero, the others share their matrix's bound.
namespace fedcpc::nn {

void init_uniform(Tensor& t, double bound, Rng& rng);

struct Linear {
    std::size_t weight, bias;
    bool has_bias = true;
};
Linear add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, DType dtype,
                  Rng& rng, bool bias = true);
Var apply(Tape& tape, ParameterSet& ps, const Linear& layer, Var x);

struct Conv1d {
    std::size_t weight, bias;
    std::size_t stride, padding;
};
Conv1d add_conv1d(ParameterSet& ps, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, std::size_t stride, std::size_t padding, DType dtype, Rng& rng);
Var apply(Tape& tape, ParameterSet& ps, const Conv1d& layer, Var x);

struct Conv2d {
    std::size_t weight, bias;
    std::size_t padding;
};
Conv2d add_conv2d(ParameterSet& ps, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, DType dtype, Rng& rng);
Var apply(Tape& tape, ParameterSet& ps, const Conv2d& layer, Var x);

struct Gru {
    std::size_t w_ih, w_hh, b_ih, b_hh;
    std::size_t hidden;
};
Gru add_gru(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, DType dtype, Rng& rng);
// Runs from a zero initial state.
Var apply(Tape& tape, ParameterSet& ps, const Gru& layer, Var x);

struct Lstm {
    std::size_t w_ih, w_hh, b_ih, b_hh;
    std::size_t hidden;
};
Lstm add_lstm(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, DType dtype,
              Rng& rng);
Var apply(Tape& tape, ParameterSet& ps, const Lstm& layer, Var x);

} // namespace fedcpc::nn
