#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ucd {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

// Dense row-major tensor, last axis fastest. Rank 0..5.
template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor zeros_like(const BasicTensor& other) {
    return BasicTensor(other.shape_);
  }

  const Shape& shape() const& { return shape_; }
  Shape shape() && { return std::move(shape_); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() & { return data_; }
  std::span<const Scalar> values() const& { return data_; }
  std::span<const Scalar> values() && = delete;  // would dangle
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw std::out_of_range("index rank mismatch");
    }
    std::size_t off = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
      if (index[a] >= shape_[a]) throw std::out_of_range("index out of range");
      off = off * shape_[a] + index[a];
    }
    return off;
  }

  Scalar& at(std::initializer_list<std::size_t> index) {
    return data_[offset(std::span(index.begin(), index.size()))];
  }
  const Scalar& at(std::initializer_list<std::size_t> index) const {
    return data_[offset(std::span(index.begin(), index.size()))];
  }

  // Pointer to the contiguous block addressed by a prefix of the index.
  Scalar* slab(std::initializer_list<std::size_t> prefix) {
    return data_.data() + prefix_offset(prefix);
  }
  const Scalar* slab(std::initializer_list<std::size_t> prefix) const {
    return data_.data() + prefix_offset(prefix);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) +
                                  " to " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](Scalar v) { return std::isfinite(v); });
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_,
                              std::vector<Other>(data_.begin(), data_.end()));
  }

  BasicTensor& operator+=(const BasicTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  BasicTensor& operator-=(const BasicTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  BasicTensor& operator*=(Scalar s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend BasicTensor operator+(BasicTensor a, const BasicTensor& b) { return a += b; }
  friend BasicTensor operator-(BasicTensor a, const BasicTensor& b) { return a -= b; }
  friend BasicTensor operator*(BasicTensor a, Scalar s) { return a *= s; }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  // Row-major (rows x cols) view of a contiguous block starting at `offset`.
  RowMatrixMap<Scalar> matrix(std::size_t offset, std::size_t rows,
                              std::size_t cols) {
    return RowMatrixMap<Scalar>(data_.data() + offset, Eigen::Index(rows),
                                Eigen::Index(cols));
  }
  ConstRowMatrixMap<Scalar> matrix(std::size_t offset, std::size_t rows,
                                   std::size_t cols) const {
    return ConstRowMatrixMap<Scalar>(data_.data() + offset, Eigen::Index(rows),
                                     Eigen::Index(cols));
  }

  void require_same_shape(const BasicTensor& o) const {
    if (o.shape_ != shape_) {
      throw std::invalid_argument("shape mismatch " + shape_str(shape_) +
                                  " vs " + shape_str(o.shape_));
    }
  }

 private:
  void check_rank() const {
    if (shape_.size() > kMaxRank) {
      throw std::invalid_argument("tensor rank exceeds 5");
    }
  }

  std::size_t prefix_offset(std::initializer_list<std::size_t> prefix) const {
    if (prefix.size() > shape_.size()) throw std::out_of_range("prefix too long");
    std::size_t off = 0;
    std::size_t a = 0;
    for (std::size_t i : prefix) {
      if (i >= shape_[a]) throw std::out_of_range("index out of range");
      off = off * shape_[a] + i;
      ++a;
    }
    for (; a < shape_.size(); ++a) off *= shape_[a];
    return off;
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " +
                                std::to_string(rank) + ", got shape " +
                                shape_str(t.shape()));
  }
}

// Linear index <-> multi-index for a row-major shape.
inline std::vector<std::size_t> unravel_index(std::size_t linear,
                                              const Shape& shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    idx[a] = linear % shape[a];
    linear /= shape[a];
  }
  return idx;
}

inline std::size_t ravel_index(std::span<const std::size_t> idx,
                               const Shape& shape) {
  std::size_t off = 0;
  for (std::size_t a = 0; a < shape.size(); ++a) off = off * shape[a] + idx[a];
  return off;
}

// (T, D, H, W) -> (T, D, H*W). Row-major layout makes this a pure relabel.
template <typename Scalar>
BasicTensor<Scalar> flatten_spatial(const BasicTensor<Scalar>& f) {
  if (f.rank() != 4) {
    throw std::invalid_argument("flatten_spatial: expected rank 4, got " +
                                shape_str(f.shape()));
  }
  return f.reshaped({f.dim(0), f.dim(1), f.dim(2) * f.dim(3)});
}

template <typename Scalar>
BasicTensor<Scalar> unflatten_spatial(const BasicTensor<Scalar>& f,
                                      std::size_t height, std::size_t width) {
  if (f.rank() != 3 || f.dim(2) != height * width) {
    throw std::invalid_argument("unflatten_spatial: cannot split " +
                                shape_str(f.shape()) + " into " +
                                std::to_string(height) + "x" +
                                std::to_string(width));
  }
  return f.reshaped({f.dim(0), f.dim(1), height, width});
}

}  // namespace ucd
