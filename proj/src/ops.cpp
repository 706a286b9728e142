#include "vcem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vcem::diff {
namespace {

// Plain loops keep the summation order independent of buffer alignment, so
// results are bitwise reproducible wherever the tensors happen to live.

// c (n x p) += a (n x q) * b (q x p)
void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t n,
              std::size_t q, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict ci = c + i * p;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      const double* __restrict bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

Tensor transposed(const Tensor& t) {
  Tensor out({t.cols(), t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(c, r) = t.at(r, c);
  return out;
}

void require_rank2(const char* op, const char* name, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": operand " + name + " must be rank 2, got " +
                     shape_to_string(t.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand a " + shape_to_string(a.shape()) +
                     " does not match operand b " + shape_to_string(b.shape()));
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
  if (!dst) return;
  auto d = dst->values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", "a", av);
  require_rank2("matmul", "b", bv);
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: operand a " + shape_to_string(av.shape()) + " and operand b " +
                     shape_to_string(bv.shape()) + " have incompatible inner extents");
  Tensor out({av.rows(), bv.cols()});
  gemm_acc(av.values().data(), bv.values().data(), out.values().data(), av.rows(), av.cols(), bv.cols());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& w = t.value(ib);
    if (Tensor* ga = t.grad_target(ia)) {
      const Tensor wt = transposed(w);
      gemm_acc(g.values().data(), wt.values().data(), ga->values().data(), g.rows(), g.cols(), wt.cols());
    }
    if (Tensor* gb = t.grad_target(ib)) {
      const Tensor xt = transposed(x);
      gemm_acc(xt.values().data(), g.values().data(), gb->values().data(), xt.rows(), xt.cols(), g.cols());
    }
  });
}

Var add(Var a, Var b) {
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t.grad_target(ia), g);
    accumulate(t.grad_target(ib), g);
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  accumulate(&out, b.value(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t.grad_target(ia), g);
    accumulate(t.grad_target(ib), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  {
    auto o = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    auto gv = g.values();
    if (Tensor* ga = t.grad_target(ia)) {
      auto d = ga->values();
      auto bv = t.value(ib).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(ib)) {
      auto d = gb->values();
      auto av = t.value(ia).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * av[i];
    }
  });
}

Var add_row_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_rank2("add_row_bias", "a", av);
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_row_bias: bias " + shape_to_string(bv.shape()) +
                     " does not match row width of " + shape_to_string(av.shape()));
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) += bv.at(0, c);
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record("add_row_bias", std::move(out), {a, bias},
                         [ia, ib](Tape& t, const Tensor& g) {
                           accumulate(t.grad_target(ia), g);
                           Tensor* gb = t.grad_target(ib);
                           if (!gb) return;
                           std::vector<double> col(g.cols(), 0.0);
                           for (std::size_t r = 0; r < g.rows(); ++r)
                             for (std::size_t c = 0; c < g.cols(); ++c) col[c] += g.at(r, c);
                           for (std::size_t c = 0; c < g.cols(); ++c) gb->at(0, c) += col[c];
                         });
}

Var scale(Var a, double factor) {
  Tensor out = map_values(a.value(), [factor](double v) { return v * factor; });
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, factor](Tape& t, const Tensor& g) {
    accumulate(t.grad_target(ia), g, factor);
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = map_values(a.value(), [offset](double v) { return v + offset; });
  const std::size_t ia = a.id();
  return a.tape().record("add_scalar", std::move(out), {a},
                         [ia](Tape& t, const Tensor& g) { accumulate(t.grad_target(ia), g); });
}

Var sigmoid(Var a) {
  Tensor out = map_values(a.value(), stable_sigmoid);
  const std::size_t ia = a.id();
  Tensor y = out;
  return a.tape().record("sigmoid", std::move(out), {a}, [ia, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    auto d = ga->values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
  const std::size_t ia = a.id();
  Tensor y = out;
  return a.tape().record("exp", std::move(out), {a}, [ia, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    auto d = ga->values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * y[i];
  });
}

Var log(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::log(v); });
  const std::size_t ia = a.id();
  return a.tape().record("log", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    auto d = ga->values();
    auto x = t.value(ia).values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] / x[i];
  });
}

Var softplus(Var a) {
  Tensor out = map_values(a.value(), [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  });
  const std::size_t ia = a.id();
  return a.tape().record("softplus", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    auto d = ga->values();
    auto x = t.value(ia).values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * stable_sigmoid(x[i]);
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2("softmax_rows", "a", av);
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double* row = out.values().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += row[c] = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  Tensor y = out;
  const std::size_t ia = a.id();
  return a.tape().record("softmax_rows", std::move(out), {a},
                         [ia, y = std::move(y)](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_target(ia);
                           if (!ga) return;
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < y.cols(); ++c) dot += y.at(r, c) * g.at(r, c);
                             for (std::size_t c = 0; c < y.cols(); ++c) ga->at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
                           }
                         });
}

Var log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2("log_softmax_rows", "a", av);
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double* row = out.values().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
  }
  Tensor y = out;
  const std::size_t ia = a.id();
  return a.tape().record("log_softmax_rows", std::move(out), {a},
                         [ia, y = std::move(y)](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_target(ia);
                           if (!ga) return;
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             double gs = 0.0;
                             for (std::size_t c = 0; c < y.cols(); ++c) gs += g.at(r, c);
                             for (std::size_t c = 0; c < y.cols(); ++c)
                               ga->at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gs;
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    for (double& d : ga->values()) d += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("mean", Tensor::scalar(s / n), {a}, [ia, n](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    for (double& d : ga->values()) d += g[0] / n;
  });
}

Var l2_norm(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  const double norm = std::sqrt(s);
  const std::size_t ia = a.id();
  return a.tape().record("l2_norm", Tensor::scalar(norm), {a}, [ia, norm](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga || norm == 0.0) return;  // zero subgradient at the origin
    auto d = ga->values();
    auto x = t.value(ia).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * x[i] / norm;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    require_rank2("concat_cols", "part", v);
    if (v.rows() != rows)
      throw ShapeError("concat_cols: operand " + std::to_string(p) + " " +
                       shape_to_string(v.shape()) + " has " + std::to_string(v.rows()) +
                       " rows, expected " + std::to_string(rows));
    cols += v.cols();
  }
  Tensor out({rows, cols});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().cols();
  }
  return parts.front().tape().record(
      "concat_cols", std::move(out), parts, [ids, offsets](Tape& t, const Tensor& g) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          Tensor* gp = t.grad_target(ids[p]);
          if (!gp) continue;
          for (std::size_t r = 0; r < gp->rows(); ++r)
            for (std::size_t c = 0; c < gp->cols(); ++c) gp->at(r, c) += g.at(r, offsets[p] + c);
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank2("slice_cols", "a", av);
  if (begin >= end || end > av.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_to_string(av.shape()));
  Tensor out({av.rows(), end - begin});
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = av.at(r, c);
  const std::size_t ia = a.id();
  return a.tape().record("slice_cols", std::move(out), {a}, [ia, begin](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga->at(r, begin + c) += g.at(r, c);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_target(ia);
    if (!ga) return;
    auto d = ga->values();
    auto gv = g.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i];
  });
}

Var mul(Var a, const Tensor& constant) { return mul(a, a.tape().constant(constant)); }
Var add(Var a, const Tensor& constant) { return add(a, a.tape().constant(constant)); }

Var broadcast_rows(Var row, std::size_t n) {
  const Tensor& rv = row.value();
  if (rv.rows() != 1) throw ShapeError("broadcast_rows: expected a single row, got " + shape_to_string(rv.shape()));
  Var r = rv.rank() == 2 ? row : reshape(row, {1, rv.cols()});
  return matmul(row.tape().constant(Tensor({n, 1}, 1.0)), r);
}

}  // namespace vcem::diff
