#pragma once

// Test-only helpers: central finite differences and random fills. The numeric
// side only evaluates a scalar function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fedcpc/core/rng.hpp"
#include "fedcpc/tensor/ops.hpp"
#include "fedcpc/tensor/parameter_set.hpp"
#include "fedcpc/tensor/tensor.hpp"

namespace fedcpc::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, DType dtype = DType::f64) {
    Tensor t(std::move(shape), dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

// Central-difference gradient of f with respect to every element of x.
inline std::vector<double> numeric_gradient(Tensor& x, const std::function<double()>& f, double h = 1e-5) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x.at(i);
        x.set(i, orig + h);
        const double up = f();
        x.set(i, orig - h);
        const double down = f();
        x.set(i, orig);
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

// max_i |a_i - n_i| / max(1e-3, max_i |n_i|): a relative error normalized by the
// gradient's scale so near-zero entries don't dominate.
inline double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double scale = 1e-8, err = 0;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < numeric.size(); ++i) err = std::max(err, std::abs(analytic[i] - numeric[i]));
    return err / std::max(scale, 1e-3);
}

inline std::vector<double> grad_of(const Tensor& t) {
    std::vector<double> g(t.numel());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = t.grad_at(i);
    return g;
}

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

// Projects the op output onto a fixed random direction so every output element
// contributes a distinct weight, then compares autodiff and central differences
// for every input. Returns the worst relative error.
inline double gradient_check(std::vector<Tensor>& inputs, const Builder& build, std::uint64_t seed) {
    Rng rng(seed);
    Tensor direction;
    auto evaluate = [&](bool with_backward) {
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : inputs) vars.push_back(tape.leaf(t));
        Var out = build(tape, vars);
        if (!direction.defined()) direction = random_tensor(out.shape(), rng);
        Var loss = ops::sum(ops::mul(out, tape.constant(direction)));
        if (with_backward) tape.backward(loss);
        return loss.value().item();
    };
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.clear_grad();
    }
    evaluate(true);
    double worst = 0;
    for (auto& t : inputs) {
        std::vector<double> analytic = grad_of(t);
        std::vector<double> numeric = numeric_gradient(t, [&] { return evaluate(false); });
        worst = std::max(worst, gradient_relative_error(analytic, numeric));
    }
    return worst;
}

// Same comparison for a scalar loss over every tensor in a ParameterSet.
inline double parameter_gradient_check(ParameterSet& params, const std::function<Var(Tape&)>& loss_fn) {
    params.set_requires_grad(true);
    params.zero_grad();
    {
        Tape tape;
        tape.backward(loss_fn(tape));
    }
    double worst = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params.at(i);
        std::vector<double> analytic = grad_of(t);
        std::vector<double> numeric = numeric_gradient(t, [&] {
            Tape tape;
            return loss_fn(tape).value().item();
        });
        worst = std::max(worst, gradient_relative_error(analytic, numeric));
    }
    return worst;
}

} // namespace fedcpc::testing
