#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gfgl/errors.hpp"

namespace gfgl {

/// Dense row-major 2-D array.
template<class T>
class Array2D {
  public:
    Array2D() = default;
    Array2D(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Array2D&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = Array2D<double>;

/// Dense 3-D array indexed (sample, row, col); used for per-sample draws.
template<class T>
class Array3D {
  public:
    Array3D() = default;
    Array3D(std::size_t n0, std::size_t n1, std::size_t n2, T fill = T{})
        : n0_(n0), n1_(n1), n2_(n2), data_(n0 * n1 * n2, fill) {}

    std::size_t dim0() const { return n0_; }
    std::size_t dim1() const { return n1_; }
    std::size_t dim2() const { return n2_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t s, std::size_t r, std::size_t c) {
        return data_[(s * n1_ + r) * n2_ + c];
    }
    const T& operator()(std::size_t s, std::size_t r, std::size_t c) const {
        return data_[(s * n1_ + r) * n2_ + c];
    }

    std::span<T> row(std::size_t s, std::size_t r) { return {data_.data() + (s * n1_ + r) * n2_, n2_}; }
    std::span<const T> row(std::size_t s, std::size_t r) const {
        return {data_.data() + (s * n1_ + r) * n2_, n2_};
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Array3D&) const = default;

  private:
    std::size_t n0_ = 0;
    std::size_t n1_ = 0;
    std::size_t n2_ = 0;
    std::vector<T> data_;
};

using Tensor3 = Array3D<double>;

inline void require_same_length(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

}  // namespace gfgl
