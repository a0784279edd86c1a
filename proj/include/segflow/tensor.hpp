#ifndef SEGFLOW_TENSOR_HPP_
#define SEGFLOW_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace segflow {

// Dense row-major tensor. Shapes are small (<= 4 dims in practice); data is
// owned contiguously so kernels can work on raw pointers.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(count(shape_), T(0)) {}

    Tensor(std::initializer_list<int> shape)
        : Tensor(std::vector<int>(shape)) {}

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // [c,h,w] indexing
    T& operator()(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    const T& operator()(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    // [r,c] indexing
    T& operator()(int r, int c) {
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }
    const T& operator()(int r, int c) const {
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T value) {
        for (auto& v : data_) v = value;
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T, typename U>
Tensor<U> tensor_cast(const Tensor<T>& src) {
    Tensor<U> out(src.shape());
    for (size_t i = 0; i < src.numel(); ++i) out[i] = static_cast<U>(src[i]);
    return out;
}

}  // namespace segflow

#endif  // SEGFLOW_TENSOR_HPP_
