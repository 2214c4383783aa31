#include "fedcpc/tensor/tape.hpp"

namespace fedcpc {

const Tensor& Var::value() const {
    if (!tape_) throw ContractViolation("use of an unbound Var");
    return tape_->value(*this);
}

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(*this); }

Var Tape::constant(Tensor value) {
    slots_.push_back(Slot{std::move(value), nullptr, false, std::nullopt});
    return Var(this, static_cast<int>(slots_.size() - 1));
}

Var Tape::leaf(Tensor& param) {
    slots_.push_back(Slot{Tensor{}, &param, param.requires_grad(), std::nullopt});
    return Var(this, static_cast<int>(slots_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    std::optional<DType> dtype;
    for (const Var& in : inputs) {
        if (!in.valid()) continue;
        if (&in.tape() != this) throw ContractViolation("op inputs recorded on different tapes");
        const DType dt = this->value(in).dtype();
        if (dtype && *dtype != dt) throw ContractViolation("mixed dtypes within one computation graph");
        dtype = dt;
        needs = needs || needs_grad(in);
    }
    slots_.push_back(Slot{std::move(value), nullptr, needs, std::nullopt});
    Var out(this, static_cast<int>(slots_.size() - 1));
    if (needs) nodes_.push_back(Node{out.id(), std::move(backward)});
    return out;
}

const Tensor& Tape::value(Var v) const {
    const Slot& s = slots_.at(v.id());
    return s.external ? *s.external : s.owned;
}

bool Tape::needs_grad(Var v) const { return slots_.at(v.id()).needs_grad; }

void Tape::backward(Var loss) {
    const Tensor& lv = value(loss);
    if (lv.numel() != 1)
        throw ContractViolation("backward() needs a scalar loss, got shape " + to_string(lv.shape()));
    if (!needs_grad(loss)) throw ContractViolation("loss does not depend on any parameter requiring grad");
    for (auto& s : slots_) s.grad.reset();
    dispatch(lv.dtype(), [&]<class T>() { grad<T>(loss)[0] = T(1); });

    replayed_ = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output > loss.id() || !slots_[it->output].grad) continue;
        it->backward(*this, Var(this, it->output));
        ++replayed_;
    }

    for (auto& s : slots_) {
        if (!s.external || !s.needs_grad || !s.grad) continue;
        Tensor& p = *s.external;
        dispatch(p.dtype(), [&]<class T>() {
            auto dst = p.grad<T>();
            const auto& src = std::get<std::vector<T>>(*s.grad);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        });
    }
}

} // namespace fedcpc
