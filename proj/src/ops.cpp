#include "qsector/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace qsector::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

Tape& tape_of(const Var& v) {
  if (v.tape() == nullptr) throw std::invalid_argument("variable is not bound to a tape");
  return *v.tape();
}

MapC as_mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapC(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapM as_mat(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapM(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_broadcast(const char* op, const Var& a, const Var& b) {
  if (!is_suffix(b.shape(), a.shape()) || b.value().size() == 0) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " are not broadcast-compatible");
  }
}

// Elementwise unary op given f(x) and df/dx expressed through (x, y).
template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  const std::size_t out = tape.size();
  return tape.record(std::move(y), {ia}, [ia, out, dfdx](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(out);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.rank() < 1 || av.cols() != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor y(out_shape);
  as_mat(y, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib, m, k, n](Tape& t, const Tensor& g) {
    auto gm = as_mat(g, m, n);
    if (t.requires_grad(ia)) as_mat(t.grad(ia), m, k).noalias() += gm * as_mat(t.value(ib), k, n).transpose();
    if (t.requires_grad(ib)) as_mat(t.grad(ib), k, n).noalias() += as_mat(t.value(ia), m, k).transpose() * gm;
  });
}

Var bmm(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor y({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    as_mat(y, m, n, i * m * n).noalias() = as_mat(av, m, k, i * m * k) * as_mat(bv, k, n, i * k * n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [=](Tape& t, const Tensor& g) {
    const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
    for (std::size_t i = 0; i < batch; ++i) {
      auto gm = as_mat(g, m, n, i * m * n);
      if (ga) as_mat(t.grad(ia), m, k, i * m * k).noalias() += gm * as_mat(t.value(ib), k, n, i * k * n).transpose();
      if (gb) as_mat(t.grad(ib), k, n, i * k * n).noalias() += as_mat(t.value(ia), m, k, i * m * k).transpose() * gm;
    }
  });
}

Var transpose_last(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 3) throw ShapeError("transpose_last expects rank 3, got " + shape_str(av.shape()));
  const std::size_t batch = av.dim(0), m = av.dim(1), n = av.dim(2);
  Tensor y({batch, n, m});
  for (std::size_t i = 0; i < batch; ++i) {
    as_mat(y, n, m, i * m * n) = as_mat(av, m, n, i * m * n).transpose();
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < batch; ++i) as_mat(ga, m, n, i * m * n) += as_mat(g, n, m, i * m * n).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_broadcast("add", a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y = av;
  y.set_requires_grad(false);
  const std::size_t nb = bv.size(), reps = y.size() / nb;
  as_mat(y, reps, nb).rowwise() += as_mat(bv, 1, nb).row(0);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib, nb, reps](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g);
    if (!t.requires_grad(ib)) return;
    if (reps == 1) {
      t.accumulate(ib, g);
    } else {
      as_mat(t.grad(ib), 1, nb).row(0) += as_mat(g, reps, nb).colwise().sum();
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

Var mul(const Var& a, const Var& b) {
  require_broadcast("mul", a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y = av;
  y.set_requires_grad(false);
  const std::size_t nb = bv.size(), reps = y.size() / nb;
  as_mat(y, reps, nb).array().rowwise() *= as_mat(bv, 1, nb).array().row(0);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib, nb, reps](Tape& t, const Tensor& g) {
    auto gm = as_mat(g, reps, nb).array();
    if (t.requires_grad(ia)) {
      as_mat(t.grad(ia), reps, nb).array() += gm.rowwise() * as_mat(t.value(ib), 1, nb).array().row(0);
    }
    if (t.requires_grad(ib)) {
      as_mat(t.grad(ib), 1, nb).array().row(0) += (gm * as_mat(t.value(ia), reps, nb).array()).colwise().sum();
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var reciprocal(const Var& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var minimum(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("minimum: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) + " differ");
  }
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(av[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  // Ties route the gradient to the left operand.
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& z = t.value(ib);
    const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] <= z[i]) {
        if (ga) t.grad(ia)[i] += g[i];
      } else if (gb) {
        t.grad(ib)[i] += g[i];
      }
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var softmax(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double* yr = y.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < n; ++c) yr[c] /= s;
  }
  const std::size_t ia = a.id(), out = tape.size();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * yv[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += yv[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Var log_softmax(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(xr[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = xr[c] - lse;
  }
  const std::size_t ia = a.id(), out = tape.size();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] - std::exp(yv[r * n + c]) * gs;
    }
  });
}

Var layer_norm(const Var& a, double eps) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = (xr[c] - mu) * inv_std[r];
  }
  const std::size_t ia = a.id(), out = tape.size();
  return tape.record(std::move(y), {ia}, [=, inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out);
    Tensor& ga = t.grad(ia);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double gm = 0.0, gy = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        gm += g[r * n + c];
        gy += g[r * n + c] * yv[r * n + c];
      }
      for (std::size_t c = 0; c < n; ++c) {
        ga[r * n + c] += inv_std[r] * (g[r * n + c] - gm * inv_n - yv[r * n + c] * gy * inv_n);
      }
    }
  });
}

Var normalize_sum(const Var& a, double eps) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor y(x.shape());
  std::vector<double> denom(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = eps;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c];
    denom[r] = s;
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = x[r * n + c] / s;
  }
  const std::size_t ia = a.id(), out = tape.size();
  return tape.record(std::move(y), {ia}, [=, denom = std::move(denom)](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(out);
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * yv[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += (g[r * n + c] - dot) / denom[r];
    }
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Tape& tape = tape_of(parts.front());
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  Shape lead = parts.front().shape();
  lead.pop_back();
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.pop_back();
    if (s != lead) {
      throw ShapeError("concat_last: shapes " + shape_str(parts.front().shape()) + " and " + shape_str(p.shape()) +
                       " differ in leading dimensions");
    }
    widths.push_back(p.value().cols());
    ids.push_back(p.id());
    total += widths.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().data() + r * widths[k], widths[k], y.data().data() + r * total + off);
    }
    off += widths[k];
  }
  return tape.record(std::move(y), ids, [=](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& gk = t.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + o + c];
        }
      }
      o += widths[k];
    }
  });
}

Var slice_last(const Var& a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), rows = x.rows();
  if (begin >= end || end > n) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  Shape out_shape = x.shape();
  out_shape.back() = w;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data().data() + r * n + begin, w, y.data().data() + r * w);
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
    }
  });
}

Var select_step(const Var& a, std::size_t step) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() != 3 || step >= x.dim(1)) {
    throw ShapeError("select_step: step " + std::to_string(step) + " invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), len = x.dim(1), n = x.dim(2);
  Tensor y({batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.data().data() + (b * len + step) * n, n, y.data().data() + b * n);
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < n; ++c) ga[(b * len + step) * n + c] += g[b * n + c];
    }
  });
}

Var stack_steps(const std::vector<Var>& steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no inputs");
  Tape& tape = tape_of(steps.front());
  const Shape s0 = steps.front().shape();
  if (s0.size() != 2) throw ShapeError("stack_steps expects rank-2 steps, got " + shape_str(s0));
  const std::size_t batch = s0[0], n = s0[1], len = steps.size();
  std::vector<std::size_t> ids;
  Tensor y({batch, len, n});
  for (std::size_t l = 0; l < len; ++l) {
    if (steps[l].shape() != s0) {
      throw ShapeError("stack_steps: shapes " + shape_str(s0) + " and " + shape_str(steps[l].shape()) + " differ");
    }
    ids.push_back(steps[l].id());
    const Tensor& v = steps[l].value();
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(v.data().data() + b * n, n, y.data().data() + (b * len + l) * n);
  }
  return tape.record(std::move(y), ids, [=](Tape& t, const Tensor& g) {
    for (std::size_t l = 0; l < len; ++l) {
      if (!t.requires_grad(ids[l])) continue;
      Tensor& gl = t.grad(ids[l]);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < n; ++c) gl[b * n + c] += g[(b * len + l) * n + c];
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor y = a.value().reshaped(std::move(shape));
  y.set_requires_grad(false);
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [ia](Tape& t, const Tensor& g) { t.accumulate(ia, g); });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  const std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_last(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  Shape out_shape = x.shape();
  out_shape.pop_back();
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c];
    y[r] = s;
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r];
    }
  });
}

Var mean_steps(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (x.rank() != 3) throw ShapeError("mean_steps expects rank 3, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(1), n = x.dim(2);
  Tensor y({batch, n});
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < n; ++c) y[b * n + c] += x[(b * len + l) * n + c] * inv;
    }
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t c = 0; c < n; ++c) ga[(b * len + l) * n + c] += g[b * n + c] * inv;
      }
    }
  });
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& index) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols();
  if (index.size() != rows) {
    throw ShapeError("gather_rows: " + std::to_string(index.size()) + " indices for shape " + shape_str(x.shape()));
  }
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= n) throw ShapeError("gather_rows: index out of range for shape " + shape_str(x.shape()));
    y[r] = x[r * n + index[r]];
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(y), {ia}, [=](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) ga[r * n + index[r]] += g[r];
  });
}

Var dropout(const Var& a, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return a;
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? s : 0.0;
  return mul(a, tape.constant(std::move(mask)));
}

}  // namespace qsector::ad
