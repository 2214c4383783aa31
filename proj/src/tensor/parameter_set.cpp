#include "fedcpc/tensor/parameter_set.hpp"

namespace fedcpc {

bool has_prefix(std::string_view name, std::span<const std::string> prefixes) {
    for (const auto& p : prefixes)
        if (name.substr(0, p.size()) == p) return true;
    return false;
}

std::size_t ParameterSet::add(std::string name, Tensor tensor) {
    if (name.empty()) throw ContractViolation("parameter names must be non-empty");
    if (contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.size() - 1;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].first == name) return i;
    return npos;
}

Tensor& ParameterSet::get(std::string_view name) {
    auto i = index_of(name);
    if (i == npos) throw ContractViolation("no parameter named '" + std::string(name) + "'");
    return entries_[i].second;
}

const Tensor& ParameterSet::get(std::string_view name) const {
    return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::shape_compatible(const ParameterSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        const auto& [na, ta] = entries_[i];
        const auto& [nb, tb] = other.entries_[i];
        if (na != nb || ta.shape() != tb.shape() || ta.dtype() != tb.dtype()) return false;
    }
    return true;
}

bool ParameterSet::bit_equal(const ParameterSet& other) const {
    if (!shape_compatible(other)) return false;
    for (std::size_t i = 0; i < size(); ++i)
        if (!entries_[i].second.bit_equal(other.entries_[i].second)) return false;
    return true;
}

ParameterSet ParameterSet::select(std::span<const std::string> prefixes) const {
    ParameterSet out;
    for (const auto& [name, t] : entries_)
        if (has_prefix(name, prefixes)) {
            Tensor copy = t;
            copy.clear_grad();
            out.add(name, std::move(copy));
        }
    return out;
}

void ParameterSet::assign(const ParameterSet& source) {
    for (const auto& [name, t] : source.entries_) {
        Tensor& dst = get(name);
        if (dst.shape() != t.shape() || dst.dtype() != t.dtype())
            throw ContractViolation("parameter '" + name + "' has shape " + to_string(dst.shape()) + "/" +
                                    to_string(dst.dtype()) + ", source has " + to_string(t.shape()) + "/" +
                                    to_string(t.dtype()));
        dst.storage() = t.storage();
    }
}

std::size_t ParameterSet::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
    for (auto& e : entries_) e.second.set_requires_grad(on);
}

} // namespace fedcpc
