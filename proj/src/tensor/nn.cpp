#include "fedcpc/tensor/nn.hpp"

#include <cmath>

namespace fedcpc::nn {

void init_uniform(Tensor& t, double bound, Rng& rng) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-bound, bound));
}

namespace {

std::size_t add_param(ParameterSet& ps, const std::string& name, Shape shape, DType dtype, double bound, Rng& rng) {
    Tensor t(std::move(shape), dtype);
    if (bound > 0) init_uniform(t, bound, rng);
    t.set_requires_grad(true);
    return ps.add(name, std::move(t));
}

} // namespace

Linear add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, DType dtype,
                  Rng& rng, bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l{};
    l.weight = add_param(ps, prefix + ".weight", {out, in}, dtype, bound, rng);
    l.has_bias = bias;
    if (bias) l.bias = add_param(ps, prefix + ".bias", {out}, dtype, bound, rng);
    return l;
}

Var apply(Tape& tape, ParameterSet& ps, const Linear& layer, Var x) {
    Var b = layer.has_bias ? tape.leaf(ps.at(layer.bias)) : Var{};
    return ops::linear(x, tape.leaf(ps.at(layer.weight)), b);
}

Conv1d add_conv1d(ParameterSet& ps, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, std::size_t stride, std::size_t padding, DType dtype, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(c_in * kernel));
    Conv1d c{};
    c.weight = add_param(ps, prefix + ".weight", {c_out, c_in, kernel}, dtype, bound, rng);
    c.bias = add_param(ps, prefix + ".bias", {c_out}, dtype, 0.0, rng);
    c.stride = stride;
    c.padding = padding;
    return c;
}

Var apply(Tape& tape, ParameterSet& ps, const Conv1d& layer, Var x) {
    return ops::conv1d(x, tape.leaf(ps.at(layer.weight)), tape.leaf(ps.at(layer.bias)), layer.stride, layer.padding);
}

Conv2d add_conv2d(ParameterSet& ps, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, DType dtype, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(c_in * kernel * kernel));
    Conv2d c{};
    c.weight = add_param(ps, prefix + ".weight", {c_out, c_in, kernel, kernel}, dtype, bound, rng);
    c.bias = add_param(ps, prefix + ".bias", {c_out}, dtype, 0.0, rng);
    c.padding = kernel / 2;
    return c;
}

Var apply(Tape& tape, ParameterSet& ps, const Conv2d& layer, Var x) {
    return ops::conv2d(x, tape.leaf(ps.at(layer.weight)), tape.leaf(ps.at(layer.bias)), layer.padding);
}

Gru add_gru(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, DType dtype, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Gru g{};
    g.w_ih = add_param(ps, prefix + ".w_ih", {3 * hidden, in}, dtype, bound, rng);
    g.w_hh = add_param(ps, prefix + ".w_hh", {3 * hidden, hidden}, dtype, bound, rng);
    g.b_ih = add_param(ps, prefix + ".b_ih", {3 * hidden}, dtype, bound, rng);
    g.b_hh = add_param(ps, prefix + ".b_hh", {3 * hidden}, dtype, bound, rng);
    g.hidden = hidden;
    return g;
}

Var apply(Tape& tape, ParameterSet& ps, const Gru& layer, Var x) {
    Var h0 = tape.constant(Tensor({layer.hidden}, x.dtype()));
    return ops::gru(x, h0,
                    {tape.leaf(ps.at(layer.w_ih)), tape.leaf(ps.at(layer.w_hh)), tape.leaf(ps.at(layer.b_ih)),
                     tape.leaf(ps.at(layer.b_hh))});
}

Lstm add_lstm(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, DType dtype,
              Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Lstm l{};
    l.w_ih = add_param(ps, prefix + ".w_ih", {4 * hidden, in}, dtype, bound, rng);
    l.w_hh = add_param(ps, prefix + ".w_hh", {4 * hidden, hidden}, dtype, bound, rng);
    l.b_ih = add_param(ps, prefix + ".b_ih", {4 * hidden}, dtype, bound, rng);
    l.b_hh = add_param(ps, prefix + ".b_hh", {4 * hidden}, dtype, bound, rng);
    l.hidden = hidden;
    return l;
}

Var apply(Tape& tape, ParameterSet& ps, const Lstm& layer, Var x) {
    Var h0 = tape.constant(Tensor({layer.hidden}, x.dtype()));
    Var c0 = tape.constant(Tensor({layer.hidden}, x.dtype()));
    return ops::lstm(x, h0, c0,
                     {tape.leaf(ps.at(layer.w_ih)), tape.leaf(ps.at(layer.w_hh)), tape.leaf(ps.at(layer.b_ih)),
                      tape.leaf(ps.at(layer.b_hh))});
}

} // namespace fedcpc::nn
