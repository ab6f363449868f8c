#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "gridcast/common.hpp"

namespace gridcast {

// Dense row-major tensor of doubles. Shapes are small vectors of extents; the @last
// axis is contiguous. All model/loss math runs on these.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(numel_of(shape_)), 0.0);
    }
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != numel_of(shape_))
            throw DomainError("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    // Same data, new shape (copy; tensors are value types here).
    Tensor reshaped(std::vector<std::int64_t> shape) const {
        if (numel_of(shape) != numel()) throw DomainError("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw DomainError("Tensor: negative extent");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

  private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.vec() == b.vec();
}

// FNV-1a over the raw bytes; used for content checksums in pipeline-equivalence tests.
inline std::uint64_t tensor_checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ULL;
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    const std::size_t n = static_cast<std::size_t>(t.numel()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace gridcast
