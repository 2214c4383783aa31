#include "fedcpc/tensor/optim.hpp"

#include <cmath>

namespace fedcpc {

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
}

void optimizer_step(ParameterSet& params, OptimizerState& state) {
    if (state.step_count == 0 && state.tracked.empty()) {
        for (const auto& [name, t] : params.entries())
            if (t.requires_grad()) {
                state.tracked.push_back(name);
                if (state.kind == OptimizerKind::adam) {
                    state.first_moment.push_back(make_storage(t.dtype(), t.numel()));
                    state.second_moment.push_back(make_storage(t.dtype(), t.numel()));
                }
            }
    }
    for (const auto& name : state.tracked) {
        const Tensor& p = params.get(name);
        if (!p.has_grad()) throw ContractViolation("optimizer step: parameter '" + name + "' has no gradient");
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    for (std::size_t i = 0; i < state.tracked.size(); ++i) {
        Tensor& p = params.get(state.tracked[i]);
        dispatch(p.dtype(), [&]<class T>() {
            auto w = p.data<T>();
            auto g = p.grad<T>();
            const T lr = static_cast<T>(state.lr);
            if (state.kind == OptimizerKind::sgd) {
                for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
                return;
            }
            auto& m = std::get<std::vector<T>>(state.first_moment[i]);
            auto& v = std::get<std::vector<T>>(state.second_moment[i]);
            if (m.size() != w.size()) throw ContractViolation("optimizer moments do not match '" + state.tracked[i] + "'");
            const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
            const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(bc2), eps = static_cast<T>(state.eps);
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = m[j] / c1;
                const T vhat = v[j] / c2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        });
        p.clear_grad();
    }
}

} // namespace fedcpc
