#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <iosfwd>
#include <numeric>
#include <string>
#include <vector>

#include "sbs/common.hpp"

namespace sbs {

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

using Dims = std::vector<Index>;

inline Index dims_product(const Dims& dims) {
  Index n = 1;
  for (Index d : dims) n *= d;
  return n;
}

inline std::string dims_to_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

/// Dense n-dimensional array in row-major order, backed by an Eigen array.
/// Value semantics throughout; the scalar type is float or double.
template <class S>
class Tensor {
public:
  using Scalar = S;

  Tensor() = default;

  Tensor(Dims dims, ArrayX<S> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_consistent();
  }

  static Tensor zeros(Dims dims) {
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = ArrayX<S>::Zero(dims_product(t.dims_));
    return t;
  }

  static Tensor full(Dims dims, S value) {
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = ArrayX<S>::Constant(dims_product(t.dims_), value);
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from_list(Dims dims, std::initializer_list<S> values) {
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = ArrayX<S>(static_cast<Index>(values.size()));
    Index i = 0;
    for (S v : values) t.data_[i++] = v;
    t.check_consistent();
    return t;
  }

  /// I.i.d. standard normal entries scaled by `stddev`.
  static Tensor randn(Dims dims, RandomStream& rng, S stddev = S(1)) {
    Tensor t = zeros(std::move(dims));
    for (Index i = 0; i < t.size(); ++i)
      t.data_[i] = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  static Tensor uniform(Dims dims, RandomStream& rng, S lo, S hi) {
    Tensor t = zeros(std::move(dims));
    for (Index i = 0; i < t.size(); ++i)
      t.data_[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index i) const { return dims_[static_cast<std::size_t>(i)]; }
  const Dims& dims() const { return dims_; }

  ArrayX<S>& raw() { return data_; }
  const ArrayX<S>& raw() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  S& at(std::initializer_list<Index> idx) { return data_[flat_index(idx)]; }
  S at(std::initializer_list<Index> idx) const { return data_[flat_index(idx)]; }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

  /// Reinterprets the flat storage under new dims of equal total size.
  Tensor reshaped(Dims new_dims) const {
    if (dims_product(new_dims) != size())
      throw ShapeError(str("reshape ", dims_to_string(dims_), " -> ",
                           dims_to_string(new_dims), ": element count differs"));
    return Tensor(std::move(new_dims), data_);
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out = Tensor<T>::zeros(dims_);
    out.raw() = data_.template cast<T>();
    return out;
  }

private:
  Index flat_index(std::initializer_list<Index> idx) const {
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      flat = flat * dims_[k] + i;
      ++k;
    }
    return flat;
  }

  void check_consistent() const {
    if (dims_product(dims_) != data_.size())
      throw ShapeError(str("tensor dims ", dims_to_string(dims_), " imply ",
                           dims_product(dims_), " elements, got ", data_.size()));
  }

  Dims dims_;
  ArrayX<S> data_;
};

/// Tensor container ("SBTN"): magic, format version u8, dtype code u8
/// (0 = 32-bit IEEE-754, 1 = 64-bit), rank u8, dims as u32 little-endian,
/// then the row-major payload little-endian. Code 0 is the interchange
/// default; code 1 exists so checkpoints round-trip bit-exactly.
enum class TensorDType : std::uint8_t { F32 = 0, F64 = 1 };

template <class S>
void write_tensor(const std::string& path, const Tensor<S>& t,
                  TensorDType dtype = TensorDType::F32);

template <class S>
Tensor<S> read_tensor(const std::string& path);

template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t, TensorDType dtype,
                  const std::string& where);

template <class S>
Tensor<S> read_tensor(std::istream& is, const std::string& where);

}  // namespace sbs
