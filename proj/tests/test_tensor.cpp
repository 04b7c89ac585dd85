// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

using namespace xmodal;
using namespace xmodal::testing;

TEST_CASE("tensor construction rejects empty extents") {
  CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), DimensionError);
  const Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(Tensor::vector({1, 2, 3}).rows() == 1);
}

TEST_CASE("matmul agrees with the triple loop on random shapes") {
  std::mt19937_64 gen(11);
  for (const auto& [m, k, n] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {3, 5, 2}, {7, 1, 9}, {17, 33, 5}, {64, 300, 260}, {5, 513, 7}}) {
    const Tensor a = random_tensor(gen, {m, k});
    const Tensor b = random_tensor(gen, {k, n});
    const Tensor ref = naive_matmul(a, b);
    CHECK(max_abs_diff(matmul(a, b), ref) < 1e-10);
    CHECK(max_abs_diff(matmul_nt(a, transpose(b)), ref) < 1e-10);
    CHECK(max_abs_diff(matmul_tn(transpose(a), b), ref) < 1e-10);
  }
}

TEST_CASE("matmul shape mismatch is a dimension error") {
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  CHECK_THROWS_AS(matmul_nt(Tensor({2, 3}), Tensor({2, 4})), DimensionError);
}

TEST_CASE("matmul result does not depend on the worker count") {
  std::mt19937_64 gen(3);
  const Tensor a = random_tensor(gen, {37, 129});
  const Tensor b = random_tensor(gen, {129, 300});
  set_num_threads(1);
  const Tensor one = matmul(a, b);
  set_num_threads(4);
  const Tensor four = matmul(a, b);
  set_num_threads(1);
  CHECK(one == four);
}

TEST_CASE("identity is neutral") {
  std::mt19937_64 gen(5);
  const Tensor a = random_tensor(gen, {4, 4});
  CHECK(matmul(a, Tensor::identity(4)) == a);
  CHECK(matmul(Tensor::identity(4), a) == a);
}

TEST_CASE("softmax survives large logits") {
  const Tensor s = softmax(Tensor::vector({1000.0, 0.0}));
  // 1 / (1 + e^-1000) rounds to 1 and e^-1000 underflows to 0 in double.
  const long double tail = std::exp(-1000.0L) / (1.0L + std::exp(-1000.0L));
  CHECK(s[0] == 1.0);
  CHECK(s[1] == static_cast<double>(tail));
  CHECK(s.all_finite());

  const Tensor u = softmax(Tensor::vector({-3.0, -3.0, -3.0, -3.0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS(softmax_inplace(std::span<double>{}));
}

TEST_CASE("softmax matches the definition in extended precision") {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(gen, {9}, 20.0);
    const Tensor s = softmax(x);
    long double z = 0;
    for (double v : x.data()) z += std::exp((long double)v);
    double total = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(s[i] >= 0.0);
      CHECK(std::abs(s[i] - static_cast<double>(std::exp((long double)x[i]) / z)) < 1e-15);
      total += s[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("cosine similarity") {
  const Tensor a = Tensor::vector({1, 2, 3});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 5})) == 0.0);
  CHECK(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({-2, 0})) == -1.0);
  CHECK_THROWS_AS(cosine_similarity(a, Tensor({3})), DegenerateError);
  CHECK_THROWS_AS(cosine_similarity(a, Tensor({4})), DimensionError);
}

TEST_CASE("rng streams are reproducible and in range") {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    differs |= u != c.uniform();
  }
  CHECK(differs);
  std::vector<int> hits(7, 0);
  Rng r(1);
  for (int i = 0; i < 7000; ++i) ++hits[r.below(7)];
  for (int h : hits) CHECK(h > 800);

  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  Rng s(9);
  s.shuffle(std::span(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}
