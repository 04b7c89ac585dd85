// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Extents are strictly positive and the
/// rank is at least one; a scalar is represented with shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor filled(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<double> row(std::size_t r) { return data().subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return data().subspan(r * cols(), cols());
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  /// Bitwise equality of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Named parameters, iterated in lexicographic name order.
using ParamStore = std::map<std::string, Tensor>;

bool bitwise_equal(const ParamStore& a, const ParamStore& b);

// ---------------------------------------------------------------------------
// Kernels. All sums run in ascending index order so results do not depend on
// the worker count.

/// Caps the number of threads used by the large matrix kernels (default 1).
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// C = A * B for A[m x k], B[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A * B^T for A[m x k], B[n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// C = A^T * B for A[k x m], B[k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Raw kernel: c[m x n] += a[m x k] * b[k x n], all row-major.
void gemm_accumulate(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);

/// Numerically safe exp-normalization of a vector (max subtracted first).
Tensor softmax(const Tensor& v);
void softmax_inplace(std::span<double> v);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double cosine_similarity(const Tensor& u, const Tensor& v);

}  // namespace xmodal
