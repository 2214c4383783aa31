#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedcpc/tensor/parameter_set.hpp"

namespace fedcpc {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    // Names of the parameters this state updates, fixed by the first step:
    // every entry with requires_grad set at that point.
    std::vector<std::string> tracked;
    std::vector<Storage> first_moment;
    std::vector<Storage> second_moment;
    std::uint64_t step_count = 0;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

// SGD: p <- p - lr * g. Adam: bias-corrected first/second moments.
// Consumes the gradients: tracked parameters have their grads cleared afterwards,
// so stepping again without a new backward() is a ContractViolation.
void optimizer_step(ParameterSet& params, OptimizerState& state);

} // namespace fedcpc
