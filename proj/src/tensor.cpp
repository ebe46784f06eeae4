#include "pkit/tensor.hpp"

#include <functional>
#include <numeric>
#include <stdexcept>

namespace pkit {

namespace {

Tensor::Index product(const std::vector<Tensor::Index>& shape) {
    Tensor::Index n = 1;
    for (Tensor::Index d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<Index> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(product(shape_)), fill) {
    compute_strides();
}

Tensor::Tensor(std::vector<Index> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != static_cast<Index>(data_.size())) {
        throw std::invalid_argument("tensor: buffer length does not match shape " + shape_string());
    }
    compute_strides();
}

void Tensor::compute_strides() {
    strides_.assign(shape_.size(), 1);
    for (size_t i = shape_.size(); i-- > 1;) strides_[i - 1] = strides_[i] * shape_[i];
}

Tensor::Index Tensor::offset(std::span<const Index> coord) const {
    if (coord.size() != shape_.size()) throw std::invalid_argument("tensor: coordinate rank mismatch");
    Index off = 0;
    for (size_t i = 0; i < coord.size(); ++i) {
        if (coord[i] < 0 || coord[i] >= shape_[i]) throw std::out_of_range("tensor: coordinate out of range");
        off += coord[i] * strides_[i];
    }
    return off;
}

Tensor& Tensor::reshape(std::vector<Index> new_shape) {
    if (product(new_shape) != size()) {
        throw std::invalid_argument("tensor: cannot reshape " + shape_string() + " to a different element count");
    }
    shape_ = std::move(new_shape);
    compute_strides();
    return *this;
}

Tensor Tensor::reshaped(std::vector<Index> new_shape) const {
    Tensor copy = *this;
    copy.reshape(std::move(new_shape));
    return copy;
}

Tensor Tensor::permuted(std::span<const Index> axes) const {
    if (axes.size() != shape_.size()) throw std::invalid_argument("tensor: permutation rank mismatch");
    std::vector<bool> seen(axes.size(), false);
    std::vector<Index> out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) {
        const auto a = static_cast<size_t>(axes[i]);
        if (axes[i] < 0 || a >= axes.size() || seen[a]) throw std::invalid_argument("tensor: invalid permutation");
        seen[a] = true;
        out_shape[i] = shape_[a];
    }
    Tensor out(out_shape);
    // Walk the output in order, carrying the matching source offset.
    std::vector<Index> coord(axes.size(), 0);
    Index src = 0;
    for (Index k = 0; k < out.size(); ++k) {
        out.data_[static_cast<size_t>(k)] = data_[static_cast<size_t>(src)];
        for (size_t i = axes.size(); i-- > 0;) {
            const Index stride = strides_[static_cast<size_t>(axes[i])];
            if (++coord[i] < out_shape[i]) {
                src += stride;
                break;
            }
            src -= (out_shape[i] - 1) * stride;
            coord[i] = 0;
        }
    }
    return out;
}

std::string Tensor::shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

}  // namespace pkit
