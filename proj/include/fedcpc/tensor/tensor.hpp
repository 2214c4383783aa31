#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedcpc/core/error.hpp"

namespace fedcpc {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;
using Storage = std::variant<std::vector<float>, std::vector<double>>;

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::string to_string(DType dtype);
std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Runs f.template operator()<T>() with T = float or double.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
    if (dtype == DType::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

Storage make_storage(DType dtype, std::size_t n);

// Dense row-major array. Copies are deep; a Tensor never aliases another.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, DType dtype);

    template <class T>
    static Tensor from(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            throw InvalidShape("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                               to_string(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = dtype_of<T>();
        t.data_ = std::move(values);
        return t;
    }
    static Tensor scalar(double value, DType dtype = DType::f64);
    static Tensor full(Shape shape, double value, DType dtype);

    bool defined() const { return !shape_.empty(); }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const;
    DType dtype() const { return dtype_; }

    template <class T>
    std::span<T> data() {
        check_dtype<T>();
        return std::get<std::vector<T>>(data_);
    }
    template <class T>
    std::span<const T> data() const {
        check_dtype<T>();
        return std::get<std::vector<T>>(data_);
    }
    const Storage& storage() const { return data_; }
    Storage& storage() { return data_; }

    double at(std::size_t i) const;
    void set(std::size_t i, double v);
    double item() const;

    // Same storage length, different extents.
    Tensor reshaped(Shape shape) const;
    Tensor to(DType dtype) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const { return grad_.has_value(); }
    // Allocates a zero gradient on first use.
    template <class T>
    std::span<T> grad() {
        check_dtype<T>();
        if (!grad_) grad_ = make_storage(dtype_, numel());
        return std::get<std::vector<T>>(*grad_);
    }
    template <class T>
    std::span<const T> grad() const {
        check_dtype<T>();
        if (!grad_) throw ContractViolation("tensor has no gradient");
        return std::get<std::vector<T>>(*grad_);
    }
    double grad_at(std::size_t i) const;
    void zero_grad();
    void clear_grad() { grad_.reset(); }

    // Bitwise equality of shape, dtype and values (grads ignored).
    bool bit_equal(const Tensor& other) const;

private:
    template <class T>
    void check_dtype() const {
        if (dtype_of<T>() != dtype_)
            throw ContractViolation("tensor dtype is " + to_string(dtype_) + ", accessed as " +
                                    to_string(dtype_of<T>()));
    }

    Shape shape_;
    DType dtype_ = DType::f32;
    Storage data_ = std::vector<float>{};
    bool requires_grad_ = false;
    std::optional<Storage> grad_;
};

} // namespace fedcpc
