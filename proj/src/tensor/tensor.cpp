#include "fedcpc/tensor/tensor.hpp"

#include <cstring>
#include <sstream>

namespace fedcpc {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Storage make_storage(DType dtype, std::size_t n) {
    if (dtype == DType::f32) return std::vector<float>(n, 0.0f);
    return std::vector<double>(n, 0.0);
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
    for (auto d : shape_)
        if (d == 0) throw InvalidShape("tensor extents must be positive, got " + to_string(shape_));
    data_ = make_storage(dtype_, shape_numel(shape_));
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    dispatch(dtype, [&]<class T>() {
        for (auto& x : t.data<T>()) x = static_cast<T>(value);
    });
    return t;
}

std::size_t Tensor::numel() const {
    return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Tensor::at(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, data_);
}

void Tensor::set(std::size_t i, double value) {
    std::visit([&](auto& v) { v.at(i) = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
               data_);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractViolation("item() on tensor of shape " + to_string(shape_));
    return at(0);
}

double Tensor::grad_at(std::size_t i) const {
    if (!grad_) throw ContractViolation("tensor has no gradient");
    return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, *grad_);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw InvalidShape("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    t.grad_.reset();
    return t;
}

Tensor Tensor::to(DType dtype) const {
    Tensor t(shape_, dtype);
    dispatch(dtype, [&]<class Out>() {
        auto out = t.data<Out>();
        std::visit(
            [&](const auto& in) {
                for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<Out>(in[i]);
            },
            data_);
    });
    t.requires_grad_ = requires_grad_;
    return t;
}

void Tensor::zero_grad() {
    if (!grad_) return;
    std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, *grad_);
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (dtype_ != other.dtype_ || shape_ != other.shape_) return false;
    return std::visit(
        [&](const auto& a) {
            const auto& b = std::get<std::decay_t<decltype(a)>>(other.data_);
            return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0;
        },
        data_);
}

} // namespace fedcpc
