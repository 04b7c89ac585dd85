// SPDX-License-Identifier: Apache-2.0
#include "xmodal/tape.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ArgumentError("operands recorded on different tapes");
    needs = needs || requires_grad(in);
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs,
                        needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad.data();
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  auto buf = grad_buffer(v);
  if (buf.size() != g.size()) {
    throw DimensionError("gradient of shape " + shape_string(g.shape()) +
                         " for value of shape " + shape_string(value(v).shape()));
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) {
    throw DimensionError("backward() needs a single-element output, got " +
                         shape_string(value(out).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor{};
  if (!requires_grad(out)) return;
  grad_buffer(out)[0] = 1.0;
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.value, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
}

template <typename F>
Var unary(Var a, F&& forward, Tape::Backward backward) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = forward(x);
  return a.tape().record(std::move(out), {a}, std::move(backward));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor out = xmodal::matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, b.value()));
                           if (t.requires_grad(b)) t.accumulate(b, matmul_tn(a.value(), g));
                         });
}

Var matmul_nt(Var a, Var b) {
  Tensor out = xmodal::matmul_nt(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           if (t.requires_grad(a)) t.accumulate(a, xmodal::matmul(g, b.value()));
                           if (t.requires_grad(b)) t.accumulate(b, matmul_tn(g, a.value()));
                         });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, g);
                           if (t.requires_grad(b)) {
                             auto gb = t.grad_buffer(b);
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           if (t.requires_grad(a)) {
                             auto ga = t.grad_buffer(a);
                             const auto& bv = b.value();
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (t.requires_grad(b)) {
                             auto gb = t.grad_buffer(b);
                             const auto& av = a.value();
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; },
               [a, s](Tape& t, const Tensor&, const Tensor& g) {
                 auto ga = t.grad_buffer(a);
                 for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
               });
}

Var add_row_vector(Var x, Var bias) {
  const std::size_t n = x.value().cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_row_vector: bias " + shape_string(bias.shape()) +
                         " for rows of " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  const auto bv = bias.value().data();
  const std::size_t m = out.size() / n;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  return x.tape().record(std::move(out), {x, bias},
                         [x, bias, m, n](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(x, g);
                           if (t.requires_grad(bias)) {
                             auto gb = t.grad_buffer(bias);
                             for (std::size_t r = 0; r < m; ++r) {
                               for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                             }
                           }
                         });
}

Var repeat_rows(Var x, std::size_t times) {
  if (times == 0) throw ArgumentError("repeat_rows: times must be positive");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out({m * times, n});
  for (std::size_t r = 0; r < m; ++r) {
    const auto src = x.value().data().subspan(r * n, n);
    for (std::size_t k = 0; k < times; ++k) {
      std::copy(src.begin(), src.end(), out.data().begin() + ((r * times + k) * n));
    }
  }
  return x.tape().record(std::move(out), {x},
                         [x, m, n, times](Tape& t, const Tensor&, const Tensor& g) {
                           auto gx = t.grad_buffer(x);
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t k = 0; k < times; ++k) {
                               const double* src = g.data().data() + (r * times + k) * n;
                               for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += src[j];
                             }
                           }
                         });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [a](Tape& t, const Tensor& y, const Tensor& g) {
                 auto ga = t.grad_buffer(a);
                 for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
               });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [a](Tape& t, const Tensor& y, const Tensor& g) {
                 auto ga = t.grad_buffer(a);
                 for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
               });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x < 0.0 ? 0.0 : x; },  // NaN passes through
               [a](Tape& t, const Tensor& y, const Tensor& g) {
                 auto ga = t.grad_buffer(a);
                 for (std::size_t i = 0; i < ga.size(); ++i) {
                   if (y[i] > 0.0) ga[i] += g[i];
                 }
               });
}

Var concat_cols(Var a, Var b) {
  const std::size_t m = a.value().rows();
  if (b.value().rows() != m) {
    throw DimensionError("concat_cols: row counts of " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t p = a.value().cols(), q = b.value().cols();
  Tensor out({m, p + q});
  for (std::size_t r = 0; r < m; ++r) {
    const auto ra = a.value().row(r);
    const auto rb = b.value().row(r);
    auto dst = out.row(r);
    std::copy(ra.begin(), ra.end(), dst.begin());
    std::copy(rb.begin(), rb.end(), dst.begin() + p);
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, p, q](Tape& t, const Tensor&, const Tensor& g) {
                           if (t.requires_grad(a)) {
                             auto ga = t.grad_buffer(a);
                             for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += g[r * (p + q) + j];
                           }
                           if (t.requires_grad(b)) {
                             auto gb = t.grad_buffer(b);
                             for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t j = 0; j < q; ++j)
                                 gb[r * q + j] += g[r * (p + q) + p + j];
                           }
                         });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + shape_string(a.shape()));
  }
  Tensor out({m, count});
  for (std::size_t r = 0; r < m; ++r) {
    const auto src = a.value().row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return a.tape().record(std::move(out), {a},
                         [a, m, n, begin, count](Tape& t, const Tensor&, const Tensor& g) {
                           auto ga = t.grad_buffer(a);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t j = 0; j < count; ++j)
                               ga[r * n + begin + j] += g[r * count + j];
                         });
}

Var reshape(Var a, Shape shape) {
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           auto ga = t.grad_buffer(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                         });
}

Var row_softmax(Var x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r) softmax_inplace(out.data().subspan(r * n, n));
  return x.tape().record(std::move(out), {x},
                         [x, m, n](Tape& t, const Tensor& y, const Tensor& g) {
                           auto gx = t.grad_buffer(x);
                           for (std::size_t r = 0; r < m; ++r) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += y[r * n + j] * g[r * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               gx[r * n + j] += y[r * n + j] * (g[r * n + j] - s);
                           }
                         });
}

Var group_weighted_sum(Var alpha, Var grid) {
  const std::size_t b = alpha.value().rows(), l = alpha.value().cols();
  if (grid.value().rank() != 2 || grid.value().rows() != b * l) {
    throw DimensionError("group_weighted_sum: weights " + shape_string(alpha.shape()) +
                         " against grid " + shape_string(grid.shape()));
  }
  const std::size_t mdim = grid.value().cols();
  Tensor out({b, mdim});
  const auto& a = alpha.value();
  const auto& p = grid.value();
  for (std::size_t i = 0; i < b; ++i) {
    double* dst = out.data().data() + i * mdim;
    for (std::size_t k = 0; k < l; ++k) {
      const double w = a[i * l + k];
      const double* src = p.data().data() + (i * l + k) * mdim;
      for (std::size_t j = 0; j < mdim; ++j) dst[j] += w * src[j];
    }
  }
  return alpha.tape().record(
      std::move(out), {alpha, grid},
      [alpha, grid, b, l, mdim](Tape& t, const Tensor&, const Tensor& g) {
        const auto& a = alpha.value();
        const auto& p = grid.value();
        if (t.requires_grad(alpha)) {
          auto ga = t.grad_buffer(alpha);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < l; ++k)
              ga[i * l + k] += dot(g.data().subspan(i * mdim, mdim),
                                   p.data().subspan((i * l + k) * mdim, mdim));
        }
        if (t.requires_grad(grid)) {
          auto gp = t.grad_buffer(grid);
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < l; ++k) {
              const double w = a[i * l + k];
              for (std::size_t j = 0; j < mdim; ++j)
                gp[(i * l + k) * mdim + j] += w * g[i * mdim + j];
            }
        }
      });
}

Var group_mean(Var grid, std::size_t group) {
  const auto& p = grid.value();
  if (group == 0 || p.rank() != 2 || p.rows() % group != 0) {
    throw DimensionError("group_mean: groups of " + std::to_string(group) +
                         " rows in " + shape_string(p.shape()));
  }
  const std::size_t b = p.rows() / group, mdim = p.cols();
  Tensor out({b, mdim});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < group; ++k)
      for (std::size_t j = 0; j < mdim; ++j) out[i * mdim + j] += p[(i * group + k) * mdim + j];
    for (std::size_t j = 0; j < mdim; ++j) out[i * mdim + j] /= static_cast<double>(group);
  }
  return grid.tape().record(std::move(out), {grid},
                            [grid, b, group, mdim](Tape& t, const Tensor&, const Tensor& g) {
                              auto gp = t.grad_buffer(grid);
                              const double inv = 1.0 / static_cast<double>(group);
                              for (std::size_t i = 0; i < b; ++i)
                                for (std::size_t k = 0; k < group; ++k)
                                  for (std::size_t j = 0; j < mdim; ++j)
                                    gp[(i * group + k) * mdim + j] += inv * g[i * mdim + j];
                            });
}

Var row_normalize(Var x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out = x.value();
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    auto row = out.data().subspan(r * n, n);
    norms[r] = l2_norm(row);
    // Non-finite rows pass through so divergence is reported by the caller.
    if (std::isfinite(norms[r]) && norms[r] <= 1e-12) {
      throw DegenerateError("cannot normalize a zero-length row (row " + std::to_string(r) + ")");
    }
    for (auto& v : row) v /= norms[r];
  }
  return x.tape().record(std::move(out), {x},
                         [x, m, n, norms = std::move(norms)](Tape& t, const Tensor& y,
                                                             const Tensor& g) {
                           auto gx = t.grad_buffer(x);
                           for (std::size_t r = 0; r < m; ++r) {
                             const double proj = dot(y.data().subspan(r * n, n),
                                                     g.data().subspan(r * n, n));
                             for (std::size_t j = 0; j < n; ++j)
                               gx[r * n + j] += (g[r * n + j] - y[r * n + j] * proj) / norms[r];
                           }
                         });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a, b, "row_dot");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) out[r] = dot(a.value().row(r), b.value().row(r));
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, n](Tape& t, const Tensor&, const Tensor& g) {
                           if (t.requires_grad(a)) {
                             auto ga = t.grad_buffer(a);
                             const auto& bv = b.value();
                             for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r] * bv[r * n + j];
                           }
                           if (t.requires_grad(b)) {
                             auto gb = t.grad_buffer(b);
                             const auto& av = a.value();
                             for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += g[r] * av[r * n + j];
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           auto ga = t.grad_buffer(a);
                           for (auto& v : ga) v += g[0];
                         });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var cosine_embedding_loss(Var cos, std::span<const int> labels, double margin) {
  const auto& c = cos.value();
  if (c.size() != labels.size()) {
    throw DimensionError("cosine_embedding_loss: " + std::to_string(c.size()) +
                         " similarities, " + std::to_string(labels.size()) + " labels");
  }
  Tensor out({c.size()});
  std::vector<double> slope(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (labels[i] == 1) {
      out[i] = 1.0 - c[i];
      slope[i] = -1.0;
    } else if (labels[i] == -1) {
      const double excess = c[i] - margin;
      out[i] = excess > 0.0 ? excess : 0.0;
      slope[i] = excess > 0.0 ? 1.0 : 0.0;
    } else {
      throw ArgumentError("pair label must be +1 or -1, got " + std::to_string(labels[i]));
    }
  }
  return cos.tape().record(std::move(out), {cos},
                           [cos, slope = std::move(slope)](Tape& t, const Tensor&,
                                                           const Tensor& g) {
                             auto gc = t.grad_buffer(cos);
                             for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += slope[i] * g[i];
                           });
}

}  // namespace xmodal::ad
