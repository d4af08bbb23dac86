#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hsipaws/errors.hpp"
#include "hsipaws/rng.hpp"

namespace hsipaws {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor of arbitrary rank. Rank-2 views map onto Eigen
// matrices so the heavy lifting (GEMM, reductions) stays inside Eigen.
template <typename ScalarT>
class Tensor {
 public:
  using Scalar = ScalarT;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<MatrixType>;
  using ConstMatrixMap = Eigen::Map<const MatrixType>;
  using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_numel(shape_))) {}
  Tensor(std::initializer_list<Index> shape) : Tensor(Shape(shape)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size())
      throw ShapeError("from_values: element count does not match shape");
    Index i = 0;
    for (Scalar v : values) t.data_[i++] = v;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  Scalar& operator[](Index flat) { return data_[flat]; }
  Scalar operator[](Index flat) const { return data_[flat]; }

  template <typename... Is>
  Scalar& operator()(Is... is) {
    return data_[flat_index(is...)];
  }
  template <typename... Is>
  Scalar operator()(Is... is) const {
    return data_[flat_index(is...)];
  }

  // Reinterprets the buffer with a new shape of identical element count.
  Tensor& reshape(Shape shape) {
    if (shape_numel(shape) != size()) {
      throw ShapeError("reshape: element count mismatch " + shape_to_string(shape_) + " -> " +
                       shape_to_string(shape));
    }
    shape_ = std::move(shape);
    return *this;
  }

  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  // Rank-2 (or explicitly factored) matrix views over the contiguous buffer.
  MatrixMap matrix(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeError("matrix view: element count mismatch");
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("matrix view: element count mismatch");
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  MatrixMap matrix() { return matrix(require_rank2_rows(), shape_.back()); }
  ConstMatrixMap matrix() const { return matrix(require_rank2_rows(), shape_.back()); }

  VectorMap vector() { return VectorMap(data_.data(), size()); }
  ConstVectorMap vector() const { return ConstVectorMap(data_.data(), size()); }

  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool equals(const Tensor& other) const {
    return shape_ == other.shape_ && (data_ == other.data_).all();
  }

  void set_zero() { data_.setZero(); }

 private:
  Index require_rank2_rows() const {
    if (rank() != 2) throw ShapeError("matrix view requires a rank-2 tensor, got " + shape_to_string(shape_));
    return shape_[0];
  }

  template <typename... Is>
  Index flat_index(Is... is) const {
    constexpr int n = sizeof...(Is);
    assert(n == rank());
    const Index idx[n] = {static_cast<Index>(is)...};
    Index flat = 0;
    for (int i = 0; i < n; ++i) {
      assert(idx[i] >= 0 && idx[i] < shape_[static_cast<std::size_t>(i)]);
      flat = flat * shape_[static_cast<std::size_t>(i)] + idx[i];
    }
    return flat;
  }

  Shape shape_;
  Storage data_;
};

using Tensord = Tensor<double>;

// Named parameter tensors with paired gradient buffers. Iteration order is
// the lexicographic name order, which keeps optimizer updates and the model
// file layout deterministic.
template <typename ScalarT>
class ParamStore {
 public:
  using Scalar = ScalarT;
  struct Entry {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool lars_adapt = true;
  };
  using Map = std::map<std::string, Entry>;

  void add(const std::string& name, Tensor<Scalar> value, bool lars_adapt) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.grad = Tensor<Scalar>::zeros(value.shape());
    e.value = std::move(value);
    e.lars_adapt = lars_adapt;
    entries_.emplace(name, std::move(e));
  }

  // Biases and other 1-D tensors are excluded from LARS adaptation by default.
  void add(const std::string& name, Tensor<Scalar> value) {
    const bool adapt = value_rank_adapts(value);
    add(name, std::move(value), adapt);
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }

  Tensor<Scalar>& value(const std::string& name) { return at(name).value; }
  const Tensor<Scalar>& value(const std::string& name) const { return at(name).value; }
  Tensor<Scalar>& grad(const std::string& name) { return at(name).grad; }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.grad.set_zero();
  }

  std::size_t size() const { return entries_.size(); }
  Index param_count() const {
    Index n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }
  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }

  // Exact (bitwise-equal values) comparison, used by the freeze contracts.
  bool same_values(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto it = entries_.begin();
    auto jt = other.entries_.begin();
    for (; it != entries_.end(); ++it, ++jt) {
      if (it->first != jt->first) return false;
      if (!it->second.value.equals(jt->second.value)) return false;
    }
    return true;
  }

 private:
  static bool value_rank_adapts(const Tensor<Scalar>& t) { return t.rank() >= 2; }

  Map entries_;
};

using ParamStored = ParamStore<double>;

}  // namespace hsipaws
