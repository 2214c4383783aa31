#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedcpc/tensor/tensor.hpp"

namespace fedcpc {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    DType dtype() const { return value().dtype(); }
    std::size_t numel() const { return value().numel(); }
    bool needs_grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Append-only record of operations for reverse-mode differentiation.
//
// Values live in slots; an op whose inputs all lack gradients records no node.
// backward() walks nodes newest-first, so every node runs after all of its
// consumers, each exactly once.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, Var output)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Tracks an external tensor (typically a model parameter) without copying it.
    // Gradients reach param.grad() when param.requires_grad() is set.
    Var leaf(Tensor& param);
    // Records an op result. The backward rule is kept only when some input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool needs_grad(Var v) const;

    // Gradient of the backward target with respect to v; zero-filled on first access.
    template <class T>
    std::span<T> grad(Var v) {
        Slot& s = slots_.at(v.id());
        if (!s.grad) s.grad = make_storage(value(v).dtype(), value(v).numel());
        return std::get<std::vector<T>>(*s.grad);
    }
    bool has_grad(Var v) const { return slots_.at(v.id()).grad.has_value(); }

    // Populates gradients for every leaf with requires_grad. Repeated calls accumulate
    // into the leaves' grad buffers.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t slot_count() const { return slots_.size(); }
    // Number of node backward rules executed by the last backward().
    std::size_t last_replay_count() const { return replayed_; }

private:
    struct Slot {
        Tensor owned;
        Tensor* external = nullptr;
        bool needs_grad = false;
        std::optional<Storage> grad;
    };
    struct Node {
        int output;
        BackwardFn backward;
    };

    std::deque<Slot> slots_;
    std::vector<Node> nodes_;
    std::size_t replayed_ = 0;
};

} // namespace fedcpc
