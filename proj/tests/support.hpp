// SPDX-License-Identifier: Apache-2.0
// Helpers and reference implementations shared by the unit and acceptance
// tests. The references are written from the definitions, not from the
// library code, and favour clarity over speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/tensor.hpp"
#include "xmodal/tensor_io.hpp"

namespace xmodal::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "xmodal") {
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
      path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()));
      if (fs::create_directories(path_)) return;
    }
    throw std::runtime_error("could not create a temp directory");
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline Tensor random_tensor(std::mt19937_64& gen, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

inline Tensor unit_vector(std::mt19937_64& gen, std::size_t n) {
  Tensor t = random_tensor(gen, {n});
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  for (auto& v : t.data()) v /= std::sqrt(s);
  return t;
}

// ---------------------------------------------------------------------------
// Linear algebra references

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += (long double)a(i, k) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline long double ref_cosine(std::span<const double> a, std::span<const double> b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (long double)a[i] * b[i];
    aa += (long double)a[i] * a[i];
    bb += (long double)b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------------------
// Model references (single example, plain loops)

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One LSTM step with gates i, f, g, o stacked in W [4h x (in+h)].
inline std::pair<std::vector<double>, std::vector<double>> ref_lstm(
    const std::vector<double>& x, const std::vector<double>& h, const std::vector<double>& c,
    const Tensor& w, const Tensor& b) {
  const std::size_t n = h.size();
  std::vector<double> in(x);
  in.insert(in.end(), h.begin(), h.end());
  std::vector<double> z(4 * n);
  for (std::size_t r = 0; r < 4 * n; ++r) {
    double s = b[r];
    for (std::size_t k = 0; k < in.size(); ++k) s += w(r, k) * in[k];
    z[r] = s;
  }
  std::vector<double> h2(n), c2(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double i = sigmoid(z[j]), f = sigmoid(z[n + j]), g = std::tanh(z[2 * n + j]),
                 o = sigmoid(z[3 * n + j]);
    c2[j] = f * c[j] + i * g;
    h2[j] = o * std::tanh(c2[j]);
  }
  return {h2, c2};
}

// ---------------------------------------------------------------------------
// Finite differences

/// Scalar function of a flat parameter map.
using ScalarFn = std::function<double(const std::map<std::string, Tensor>&)>;

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences of step h against `analytic`; error per coordinate is
/// |a - n| / max(|n|, floor).
inline FdResult fd_compare(const ScalarFn& f, std::map<std::string, Tensor> params,
                           const std::map<std::string, Tensor>& analytic, double h = 1e-4,
                           double floor = 1.0) {
  FdResult r;
  for (auto& [name, t] : params) {
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = f(params);
      t[i] = saved - h;
      const double down = f(params);
      t[i] = saved;
      const double n = (up - down) / (2 * h);
      const double a = g[i];
      const double err = std::abs(a - n) / std::max(std::abs(n), floor);
      r.max_rel_error = std::max(r.max_rel_error, err);
      ++r.coordinates;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Retrieval references

/// AP straight from the definition: the mean, over relevant items, of the
/// fraction of relevant items among the top r where r is the item's rank.
/// Precision at each rank is recounted from scratch; terms are summed in rank
/// order in double precision, so a correct implementation matches bit for bit.
inline double brute_force_ap(const std::vector<std::string>& ranking,
                             const std::set<std::string>& relevant) {
  if (relevant.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t r = 1; r <= ranking.size(); ++r) {
    if (!relevant.count(ranking[r - 1])) continue;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < r; ++k) hits += relevant.count(ranking[k]);
    total += static_cast<double>(hits) / static_cast<double>(r);
  }
  return total / static_cast<double>(relevant.size());
}

// ---------------------------------------------------------------------------
// Fixtures

inline fs::path fixture_dir() { return fs::path(XMODAL_FIXTURE_DIR); }

/// Copies one manifest fixture into `dir` as manifest.json and writes every
/// feature file it mentions that the valid fixture provides.
inline fs::path stage_manifest_fixture(const std::string& name, const fs::path& dir) {
  const fs::path src = fixture_dir() / "manifests" / name;
  fs::copy_file(src, dir / "manifest.json", fs::copy_options::overwrite_existing);
  std::mt19937_64 gen(7);
  for (const char* g : {"img0", "img1", "img2"})
    write_tensor(dir / "grids" / (std::string(g) + ".xmt"), random_tensor(gen, {2, 2, 3}));
  for (const char* t : {"cat", "dog", "tree"})
    write_tensor(dir / "queries/text" / (std::string(t) + ".xmt"), random_tensor(gen, {5}));
  for (const char* s : {"img0_s0", "img1_s0", "tree_pool00"})
    write_tensor(dir / "queries/sketch" / (std::string(s) + ".xmt"), random_tensor(gen, {6}));
  return dir / "manifest.json";
}

inline const std::vector<std::pair<std::string, ViolationKind>>& malformed_fixtures() {
  static const std::vector<std::pair<std::string, ViolationKind>> list = {
      {"malformed-json.json", ViolationKind::kMalformedJson},
      {"missing-field.json", ViolationKind::kMissingField},
      {"wrong-type.json", ViolationKind::kWrongType},
      {"bad-grid-shape.json", ViolationKind::kBadGridShape},
      {"unknown-class.json", ViolationKind::kUnknownClass},
      {"bad-label-count.json", ViolationKind::kBadLabelCount},
      {"duplicate-label.json", ViolationKind::kDuplicateLabel},
      {"duplicate-id.json", ViolationKind::kDuplicateId},
      {"dangling-path.json", ViolationKind::kDanglingPath},
      {"unknown-query-ref.json", ViolationKind::kUnknownQueryRef},
  };
  return list;
}

}  // namespace xmodal::testing
