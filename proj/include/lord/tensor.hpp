#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lord/errors.hpp"

namespace lord {

int shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major tensor of 64-bit reals. Sizes in this project are small
// enough that value semantics and copies are the simple, correct choice.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int>(data_.size()) != shape_size(shape_)) {
            throw ContractError("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int size() const { return static_cast<int>(data_.size()); }
    bool empty() const { return data_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }

    int rows() const {
        if (ndim() != 2) throw ContractError("Tensor::rows: not 2-d, shape " + shape_str(shape_));
        return shape_[0];
    }
    int cols() const {
        if (ndim() != 2) throw ContractError("Tensor::cols: not 2-d, shape " + shape_str(shape_));
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at2(int r, int c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at2(int r, int c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // Value of a size-1 tensor.
    double item() const {
        if (size() != 1) throw ContractError("Tensor::item: size " + std::to_string(size()) + " != 1");
        return data_[0];
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace lord
