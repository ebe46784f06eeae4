#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pkit {

// Dense row-major N-d array of doubles.
class Tensor {
public:
    using Index = int64_t;

    Tensor() = default;
    explicit Tensor(std::vector<Index> shape, double fill = 0.0);
    Tensor(std::vector<Index> shape, std::vector<double> data);

    const std::vector<Index>& shape() const { return shape_; }
    const std::vector<Index>& strides() const { return strides_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index axis) const { return shape_.at(static_cast<size_t>(axis)); }
    Index size() const { return static_cast<Index>(data_.size()); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    Index offset(std::span<const Index> coord) const;
    double& operator()(std::initializer_list<Index> coord) { return data_[static_cast<size_t>(offset(coord))]; }
    double operator()(std::initializer_list<Index> coord) const { return data_[static_cast<size_t>(offset(coord))]; }

    // Reinterprets the buffer in place; never copies.
    Tensor& reshape(std::vector<Index> new_shape);
    // Copying variant.
    Tensor reshaped(std::vector<Index> new_shape) const;

    // out has shape[axes[i]] at position i; copies.
    Tensor permuted(std::span<const Index> axes) const;

    bool operator==(const Tensor& other) const = default;

    std::string shape_string() const;

private:
    void compute_strides();

    std::vector<Index> shape_;
    std::vector<Index> strides_;
    std::vector<double> data_;
};

}  // namespace pkit
