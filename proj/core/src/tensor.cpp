// SPDX-License-Identifier: Apache-2.0
#include "xmodal/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <thread>

#include "xmodal/errors.hpp"

namespace xmodal {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t checked_product(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(checked_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_product(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " needs " +
                         std::to_string(checked_product(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw DimensionError("rows() on tensor of shape " + shape_string(shape_));
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw DimensionError("cols() on tensor of shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (checked_product(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(),
                      a.data_.size() * sizeof(double)) == 0);
}

bool bitwise_equal(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !(ia->second == ib->second)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {
std::atomic<std::size_t> g_threads{1};

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 256;

void gemm_rows(const double* a, const double* b, double* c, std::size_t row_begin,
               std::size_t row_end, std::size_t k, std::size_t n) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t jn = std::min(kColBlock, n - j0);
    std::size_t i = row_begin;
    for (; i + kRowBlock <= row_end; i += kRowBlock) {
      double* __restrict c0 = c + (i + 0) * n + j0;
      double* __restrict c1 = c + (i + 1) * n + j0;
      double* __restrict c2 = c + (i + 2) * n + j0;
      double* __restrict c3 = c + (i + 3) * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const double* __restrict bp = b + p * n + j0;
        const double a0 = a[(i + 0) * k + p];
        const double a1 = a[(i + 1) * k + p];
        const double a2 = a[(i + 2) * k + p];
        const double a3 = a[(i + 3) * k + p];
        for (std::size_t j = 0; j < jn; ++j) {
          const double bv = bp[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < row_end; ++i) {
      double* __restrict ci = c + i * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const double* __restrict bp = b + p * n + j0;
        const double av = a[i * k + p];
        for (std::size_t j = 0; j < jn; ++j) ci[j] += av * bp[j];
      }
    }
  }
}
}  // namespace

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads; }

void gemm_accumulate(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  if (a.size() != m * k || b.size() != k * n || c.size() != m * n) {
    throw DimensionError("gemm_accumulate: buffer sizes do not match extents");
  }
  const std::size_t workers = std::min(g_threads.load(), m / kRowBlock);
  // Every output element is produced by exactly one worker with the same
  // summation order, so the result is independent of the worker count.
  if (workers <= 1 || m * k * n < (std::size_t{1} << 20)) {
    gemm_rows(a.data(), b.data(), c.data(), 0, m, k, n);
    return;
  }
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b0 = blocks * w / workers;
    const std::size_t b1 = blocks * (w + 1) / workers;
    const std::size_t r0 = b0 * kRowBlock;
    const std::size_t r1 = std::min(m, b1 * kRowBlock);
    pool.emplace_back(gemm_rows, a.data(), b.data(), c.data(), r0, r1, k, n);
  }
  for (auto& t : pool) t.join();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  gemm_accumulate(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      for (std::size_t i = i0; i < std::min(m, i0 + kTile); ++i) {
        for (std::size_t j = j0; j < std::min(n, j0 + kTile); ++j) {
          t(j, i) = a(i, j);
        }
      }
    }
  }
  return t;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner extents differ, " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  return matmul(a, transpose(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner extents differ, " +
                         shape_string(a.shape()) + "^T x " +
                         shape_string(b.shape()));
  }
  return matmul(transpose(a), b);
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) throw DimensionError("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  // sum >= 1 because the maximum contributes exp(0).
  for (auto& x : v) x /= sum;
}

Tensor softmax(const Tensor& v) {
  if (v.rank() != 1) {
    throw DimensionError("softmax expects a vector, got " + shape_string(v.shape()));
  }
  Tensor out = v;
  softmax_inplace(out.data());
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_similarity: shapes " + shape_string(u.shape()) +
                         " and " + shape_string(v.shape()));
  }
  const double nu = l2_norm(u.data());
  const double nv = l2_norm(v.data());
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw DegenerateError("cosine_similarity: zero-norm argument");
  }
  return std::clamp(dot(u.data(), v.data()) / (nu * nv), -1.0, 1.0);
}

}  // namespace xmodal
