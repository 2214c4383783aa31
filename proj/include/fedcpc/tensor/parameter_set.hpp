#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedcpc/tensor/tensor.hpp"

namespace fedcpc {

// Ordered, uniquely-named tensors. This is the unit models expose, the optimizer
// updates, FedAvg averages and the weights format serializes.
class ParameterSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    // Throws ContractViolation on a duplicate name. Returns the new entry's index.
    std::size_t add(std::string name, Tensor tensor);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<Entry>& entries() const { return entries_; }

    Tensor& at(std::size_t i) { return entries_.at(i).second; }
    const Tensor& at(std::size_t i) const { return entries_.at(i).second; }
    const std::string& name(std::size_t i) const { return entries_.at(i).first; }

    bool contains(std::string_view name) const { return index_of(name) != npos; }
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t index_of(std::string_view name) const;
    Tensor& get(std::string_view name);
    const Tensor& get(std::string_view name) const;

    // Same name, shape and dtype sequence.
    bool shape_compatible(const ParameterSet& other) const;
    bool bit_equal(const ParameterSet& other) const;

    // Entries whose names start with any of the prefixes, in original order.
    ParameterSet select(std::span<const std::string> prefixes) const;
    // Copies values (not grads) of every entry in `source` into the same-named entry here.
    // Throws ContractViolation when a name is missing or shapes differ.
    void assign(const ParameterSet& source);

    std::size_t total_elements() const;
    void zero_grad();
    void set_requires_grad(bool on);

private:
    std::vector<Entry> entries_;
};

bool has_prefix(std::string_view name, std::span<const std::string> prefixes);

} // namespace fedcpc
