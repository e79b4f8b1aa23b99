#include "emochat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "emochat/kernels.hpp"

namespace emochat {

namespace {

bool tape_active(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->on_tape()) return true;
  return false;
}

void record(Tensor& out, std::vector<Tensor> parents,
            std::function<void()> fn) {
  auto node = std::make_shared<Node>();
  node->parents = std::move(parents);
  node->out = out.detached();
  node->backprop = std::move(fn);
  out.set_node(std::move(node));
}

std::size_t last_dim(const Tensor& t) {
  return t.ndim() == 0 ? 1 : std::size_t(t.shape().back());
}

std::size_t rows_of(const Tensor& t) {
  const std::size_t n = last_dim(t);
  return n == 0 ? 0 : t.numel() / n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail_arg(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
             " vs " + shape_str(b.shape()));
}

bool is_trailing_vector(const Tensor& a, const Tensor& b) {
  return b.ndim() == 1 && a.ndim() >= 1 &&
         std::size_t(b.dim(0)) == last_dim(a) && a.shape() != b.shape();
}

// Shared forward/backward for elementwise binary ops with optional
// trailing-vector broadcast of b over a's rows.
template <class Fwd, class DfA, class DfB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 DfA dfa, DfB dfb) {
  const bool bcast = is_trailing_vector(a, b);
  if (!bcast) check_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel(), cols = last_dim(a);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < n; ++i)
    po[i] = fwd(pa[i], pb[bcast ? i % cols : i]);
  if (tape_active({&a, &b})) {
    record(out, {a, b}, [a = a, b = b, out = out.detached(), bcast, dfa, dfb]() mutable {
      const std::size_t n = a.numel(), cols = last_dim(a);
      const auto& dy = out.grad();
      const Real* pa = a.data();
      const Real* pb = b.data();
      if (a.on_tape()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < n; ++i)
          ga[i] += dy[i] * dfa(pa[i], pb[bcast ? i % cols : i]);
      }
      if (b.on_tape()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < n; ++i)
          gb[bcast ? i % cols : i] += dy[i] * dfb(pa[i], pb[bcast ? i % cols : i]);
      }
    });
  }
  return out;
}

// Elementwise unary: forward f(x), backward df(x, y) * dy.
template <class Fwd, class Df>
Tensor unary_op(const Tensor& a, Fwd fwd, Df df) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), df]() mutable {
      const auto& dy = out.grad();
      if (!a.on_tape()) return;
      auto& ga = a.grad();
      const Real* pa = a.data();
      const Real* po = out.data();
      for (std::size_t i = 0; i < a.numel(); ++i)
        ga[i] += dy[i] * df(pa[i], po[i]);
    });
  }
  return out;
}

Real sigmoid_val(Real x) {
  return x >= 0 ? Real(1) / (Real(1) + std::exp(-x))
                : std::exp(x) / (Real(1) + std::exp(x));
}

Real softplus_val(Real x) {
  if (x > Real(20)) return x;
  return std::log1p(std::exp(x));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", a, b, [](Real x, Real y) { return x + y; },
                   [](Real, Real) { return Real(1); },
                   [](Real, Real) { return Real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", a, b, [](Real x, Real y) { return x - y; },
                   [](Real, Real) { return Real(1); },
                   [](Real, Real) { return Real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", a, b, [](Real x, Real y) { return x * y; },
                   [](Real, Real y) { return y; },
                   [](Real x, Real) { return x; });
}

Tensor scale(const Tensor& a, Real s) {
  return unary_op(a, [s](Real x) { return x * s; },
                  [s](Real, Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary_op(a, [s](Real x) { return x + s; },
                  [](Real, Real) { return Real(1); });
}

Tensor neg(const Tensor& a) { return scale(a, Real(-1)); }

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    fail_arg("matmul: expects 2-D operands, got " + shape_str(a.shape()) +
             " and " + shape_str(b.shape()));
  const std::size_t m = std::size_t(a.dim(0)), k = std::size_t(a.dim(1));
  const std::size_t bk = std::size_t(transpose_b ? b.dim(1) : b.dim(0));
  const std::size_t n = std::size_t(transpose_b ? b.dim(0) : b.dim(1));
  if (k != bk)
    fail_arg("matmul: inner dimensions differ, " + shape_str(a.shape()) +
             (transpose_b ? " x T" : " x ") + shape_str(b.shape()));
  Tensor out = Tensor::zeros({int(m), int(n)});
  kernels::matmul(transpose_b ? kernels::MatmulMode::NT : kernels::MatmulMode::NN,
                  m, k, n, a.data(), b.data(), out.data(), false);
  if (tape_active({&a, &b})) {
    record(out, {a, b}, [a = a, b = b, out = out.detached(), m, k, n, transpose_b]() mutable {
      const Real* dy = out.grad().data();
      if (a.on_tape()) {
        // da = dy . b^T   (or dy . b when b was transposed)
        kernels::matmul(transpose_b ? kernels::MatmulMode::NN : kernels::MatmulMode::NT,
                        m, n, k, dy, b.data(), a.grad().data(), true);
      }
      if (b.on_tape()) {
        if (!transpose_b) {
          // db[k,n] = a^T . dy
          kernels::matmul(kernels::MatmulMode::TN, k, m, n, a.data(), dy,
                          b.grad().data(), true);
        } else {
          // db[n,k] = dy^T . a
          kernels::matmul(kernels::MatmulMode::TN, n, m, k, dy, a.data(),
                          b.grad().data(), true);
        }
      }
    });
  }
  return out;
}

Tensor exp_op(const Tensor& a) {
  return unary_op(a, [](Real x) { return std::exp(x); },
                  [](Real, Real y) { return y; });
}

Tensor log_op(const Tensor& a) {
  return unary_op(a, [](Real x) { return std::log(x); },
                  [](Real x, Real) { return Real(1) / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](Real x) { return sigmoid_val(x); },
                  [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor silu(const Tensor& a) {
  return unary_op(a, [](Real x) { return x * sigmoid_val(x); },
                  [](Real x, Real) {
                    const Real s = sigmoid_val(x);
                    return s * (Real(1) + x * (Real(1) - s));
                  });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op(a, [](Real x) { return std::tanh(x); },
                  [](Real, Real y) { return Real(1) - y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(a, [](Real x) { return softplus_val(x); },
                  [](Real x, Real) { return sigmoid_val(x); });
}

namespace {

enum class SmKind { Softmax, LogSoftmax };

Tensor softmax_impl(const Tensor& a, SmKind kind) {
  const std::size_t cols = last_dim(a), rows = rows_of(a);
  if (cols == 0) fail_arg("softmax: empty last axis, shape " + shape_str(a.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const Real* pa = a.data();
  Real* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = pa + r * cols;
    Real* y = po + r * cols;
    Real mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const Real e = std::exp(x[j] - mx);
      y[j] = e;
      sum += e;
    }
    if (kind == SmKind::Softmax) {
      const Real inv = Real(1) / sum;
      for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
    } else {
      const Real lse = std::log(sum) + mx;
      for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
    }
  }
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), kind, rows, cols]() mutable {
      if (!a.on_tape()) return;
      const auto& dy = out.grad();
      const Real* po = out.data();
      auto& ga = a.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* y = po + r * cols;
        const Real* g = dy.data() + r * cols;
        Real* dst = ga.data() + r * cols;
        Real dot = 0;
        if (kind == SmKind::Softmax) {
          for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < cols; ++j) dst[j] += y[j] * (g[j] - dot);
        } else {
          for (std::size_t j = 0; j < cols; ++j) dot += g[j];
          for (std::size_t j = 0; j < cols; ++j)
            dst[j] += g[j] - std::exp(y[j]) * dot;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a) { return softmax_impl(a, SmKind::Softmax); }
Tensor log_softmax(const Tensor& a) { return softmax_impl(a, SmKind::LogSoftmax); }

namespace {

Tensor reduce_all(const Tensor& a, bool mean) {
  const std::size_t n = a.numel();
  if (n == 0) fail_arg("sum/mean: empty tensor");
  Real acc = 0;
  const Real* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i];
  const Real w = mean ? Real(1) / Real(n) : Real(1);
  Tensor out = Tensor::scalar(acc * w);
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), w]() mutable {
      if (!a.on_tape()) return;
      const Real g = out.grad()[0] * w;
      auto& ga = a.grad();
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor reduce_axis(const Tensor& a, int axis, bool mean) {
  if (a.ndim() != 2) fail_arg("sum/mean_axis: expects 2-D, got " + shape_str(a.shape()));
  if (axis != 0 && axis != 1) fail_arg("sum/mean_axis: axis must be 0 or 1");
  const std::size_t m = std::size_t(a.dim(0)), n = std::size_t(a.dim(1));
  const std::size_t out_n = axis == 0 ? n : m;
  const Real w = mean ? Real(1) / Real(axis == 0 ? m : n) : Real(1);
  Tensor out = Tensor::zeros({int(out_n)});
  const Real* pa = a.data();
  Real* po = out.data();
  if (axis == 0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) po[j] += pa[i * n + j];
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += pa[i * n + j];
      po[i] = acc;
    }
  }
  if (w != Real(1))
    for (std::size_t i = 0; i < out_n; ++i) po[i] *= w;
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), axis, m, n, w]() mutable {
      if (!a.on_tape()) return;
      const auto& dy = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] += w * dy[axis == 0 ? j : i];
    });
  }
  return out;
}

}  // namespace

Tensor sum_all(const Tensor& a) { return reduce_all(a, false); }
Tensor mean_all(const Tensor& a) { return reduce_all(a, true); }
Tensor sum_axis(const Tensor& a, int axis) { return reduce_axis(a, axis, false); }
Tensor mean_axis(const Tensor& a, int axis) { return reduce_axis(a, axis, true); }

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  if (n != a.numel())
    fail_arg("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
             " changes element count");
  Tensor out = Tensor::from_data(std::move(shape), a.values());
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached()]() mutable {
      if (a.on_tape()) a.accumulate_grad(out.grad().data(), out.grad().size());
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail_arg("concat_rows: no parts");
  const std::size_t cols = last_dim(parts[0]);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || last_dim(p) != cols)
      fail_arg("concat_rows: shape mismatch " + shape_str(parts[0].shape()) +
               " vs " + shape_str(p.shape()));
    total += rows_of(p);
  }
  Tensor out = Tensor::zeros({int(total), int(cols)});
  Real* po = out.data();
  for (const Tensor& p : parts) {
    std::memcpy(po, p.data(), p.numel() * sizeof(Real));
    po += p.numel();
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.on_tape();
  if (grad_enabled() && needs) {
    record(out, parts, [parts = parts, out = out.detached()]() mutable {
      const Real* dy = out.grad().data();
      for (Tensor p : parts) {
        if (p.on_tape()) p.accumulate_grad(dy, p.numel());
        dy += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail_arg("concat_cols: no parts");
  const std::size_t m = rows_of(parts[0]);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || rows_of(p) != m)
      fail_arg("concat_cols: shape mismatch " + shape_str(parts[0].shape()) +
               " vs " + shape_str(p.shape()));
    total += last_dim(p);
  }
  Tensor out = Tensor::zeros({int(m), int(total)});
  Real* po = out.data();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = last_dim(p);
    for (std::size_t r = 0; r < m; ++r)
      std::memcpy(po + r * total + off, p.data() + r * pc, pc * sizeof(Real));
    off += pc;
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.on_tape();
  if (grad_enabled() && needs) {
    record(out, parts, [parts = parts, out = out.detached(), m, total]() mutable {
      const Real* dy = out.grad().data();
      std::size_t off = 0;
      for (Tensor p : parts) {
        const std::size_t pc = last_dim(p);
        if (p.on_tape()) {
          auto& g = p.grad();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < pc; ++j)
              g[r * pc + j] += dy[r * total + off + j];
        }
        off += pc;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.ndim() != 2) fail_arg("slice_rows: expects 2-D, got " + shape_str(a.shape()));
  if (r0 < 0 || r1 > a.dim(0) || r0 > r1)
    fail_arg("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
             ") out of bounds for " + shape_str(a.shape()));
  const std::size_t n = last_dim(a);
  Tensor out = Tensor::zeros({r1 - r0, int(n)});
  std::memcpy(out.data(), a.data() + std::size_t(r0) * n,
              out.numel() * sizeof(Real));
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), r0, n]() mutable {
      if (!a.on_tape()) return;
      const auto& dy = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i)
        ga[std::size_t(r0) * n + i] += dy[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.ndim() != 2) fail_arg("slice_cols: expects 2-D, got " + shape_str(a.shape()));
  if (c0 < 0 || c1 > a.dim(1) || c0 > c1)
    fail_arg("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
             ") out of bounds for " + shape_str(a.shape()));
  const std::size_t m = std::size_t(a.dim(0)), n = std::size_t(a.dim(1));
  const std::size_t w = std::size_t(c1 - c0);
  Tensor out = Tensor::zeros({int(m), int(w)});
  Real* po = out.data();
  const Real* pa = a.data();
  for (std::size_t r = 0; r < m; ++r)
    std::memcpy(po + r * w, pa + r * n + std::size_t(c0), w * sizeof(Real));
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), c0, m, n, w]() mutable {
      if (!a.on_tape()) return;
      const auto& dy = out.grad();
      auto& ga = a.grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < w; ++j)
          ga[r * n + std::size_t(c0) + j] += dy[r * w + j];
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) fail_arg("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t v = std::size_t(table.dim(0)), d = std::size_t(table.dim(1));
  for (int id : ids)
    if (id < 0 || std::size_t(id) >= v)
      fail_arg("embedding: id " + std::to_string(id) + " outside table " +
               shape_str(table.shape()));
  Tensor out = Tensor::zeros({int(ids.size()), int(d)});
  Real* po = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(po + i * d, table.data() + std::size_t(ids[i]) * d, d * sizeof(Real));
  if (tape_active({&table})) {
    record(out, {table}, [table = table, out = out.detached(), ids, d]() mutable {
      if (!table.on_tape()) return;
      const auto& dy = out.grad();
      auto& g = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          g[std::size_t(ids[i]) * d + j] += dy[i * d + j];
    });
  }
  return out;
}

Tensor gather_rc(const Tensor& a, const std::vector<int>& rows,
                 const std::vector<int>& cols) {
  if (a.ndim() != 2) fail_arg("gather_rc: expects 2-D, got " + shape_str(a.shape()));
  if (rows.size() != cols.size()) fail_arg("gather_rc: rows/cols length mismatch");
  const std::size_t m = std::size_t(a.dim(0)), n = std::size_t(a.dim(1));
  Tensor out = Tensor::zeros({int(rows.size())});
  Real* po = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || std::size_t(rows[i]) >= m || cols[i] < 0 ||
        std::size_t(cols[i]) >= n)
      fail_arg("gather_rc: index (" + std::to_string(rows[i]) + "," +
               std::to_string(cols[i]) + ") outside " + shape_str(a.shape()));
    po[i] = a.data()[std::size_t(rows[i]) * n + std::size_t(cols[i])];
  }
  if (tape_active({&a})) {
    record(out, {a}, [a = a, out = out.detached(), rows, cols, n]() mutable {
      if (!a.on_tape()) return;
      const auto& dy = out.grad();
      auto& g = a.grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        g[std::size_t(rows[i]) * n + std::size_t(cols[i])] += dy[i];
    });
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, Real eps) {
  const std::size_t n = last_dim(x), m = rows_of(x);
  if (gain.ndim() != 1 || std::size_t(gain.dim(0)) != n)
    fail_arg("rms_norm: gain " + shape_str(gain.shape()) + " does not match last axis of " +
             shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> inv_rms(m);
  const Real* px = x.data();
  const Real* pg = gain.data();
  Real* po = out.data();
  for (std::size_t r = 0; r < m; ++r) {
    const Real* xr = px + r * n;
    Real ms = 0;
    for (std::size_t j = 0; j < n; ++j) ms += xr[j] * xr[j];
    const Real inv = Real(1) / std::sqrt(ms / Real(n) + eps);
    inv_rms[r] = inv;
    Real* yr = po + r * n;
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] * inv * pg[j];
  }
  if (tape_active({&x, &gain})) {
    record(out, {x, gain},
           [x = x, gain = gain, out = out.detached(), inv_rms = std::move(inv_rms), m, n]() mutable {
             const auto& dy = out.grad();
             const Real* px = x.data();
             const Real* pg = gain.data();
             for (std::size_t r = 0; r < m; ++r) {
               const Real* xr = px + r * n;
               const Real* gr = dy.data() + r * n;
               const Real inv = inv_rms[r];
               if (x.on_tape()) {
                 Real s = 0;
                 for (std::size_t j = 0; j < n; ++j) s += gr[j] * pg[j] * xr[j];
                 const Real coef = inv * inv * inv * s / Real(n);
                 auto& gx = x.grad();
                 for (std::size_t j = 0; j < n; ++j)
                   gx[r * n + j] += gr[j] * pg[j] * inv - xr[j] * coef;
               }
               if (gain.on_tape()) {
                 auto& gg = gain.grad();
                 for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xr[j] * inv;
               }
             }
           });
  }
  return out;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.ndim() != 2 || w.ndim() != 2)
    fail_arg("causal_conv1d: expects 2-D x and w, got " + shape_str(x.shape()) +
             " and " + shape_str(w.shape()));
  const std::size_t t_len = std::size_t(x.dim(0)), c = std::size_t(x.dim(1));
  const std::size_t kw = std::size_t(w.dim(1));
  if (std::size_t(w.dim(0)) != c || bias.numel() != c)
    fail_arg("causal_conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
             shape_str(w.shape()));
  Tensor out = Tensor::zeros(x.shape());
  const Real* px = x.data();
  const Real* pw = w.data();
  const Real* pb = bias.data();
  Real* po = out.data();
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real acc = pb[ch];
      const std::size_t jmax = std::min(kw, t + 1);
      for (std::size_t j = 0; j < jmax; ++j)
        acc += pw[ch * kw + j] * px[(t - j) * c + ch];
      po[t * c + ch] = acc;
    }
  if (tape_active({&x, &w, &bias})) {
    record(out, {x, w, bias}, [x = x, w = w, bias = bias, out = out.detached(), t_len, c, kw]() mutable {
      const auto& dy = out.grad();
      const Real* px = x.data();
      const Real* pw = w.data();
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Real g = dy[t * c + ch];
          const std::size_t jmax = std::min(kw, t + 1);
          if (x.on_tape()) {
            auto& gx = x.grad();
            for (std::size_t j = 0; j < jmax; ++j)
              gx[(t - j) * c + ch] += g * pw[ch * kw + j];
          }
          if (w.on_tape()) {
            auto& gw = w.grad();
            for (std::size_t j = 0; j < jmax; ++j)
              gw[ch * kw + j] += g * px[(t - j) * c + ch];
          }
          if (bias.on_tape()) bias.grad()[ch] += g;
        }
    });
  }
  return out;
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& b, const Tensor& c, const Tensor& d_skip) {
  if (x.ndim() != 2 || delta.shape() != x.shape())
    fail_arg("selective_scan: x " + shape_str(x.shape()) + " vs delta " +
             shape_str(delta.shape()));
  const std::size_t t_len = std::size_t(x.dim(0)), d_inner = std::size_t(x.dim(1));
  if (a.ndim() != 2 || std::size_t(a.dim(0)) != d_inner)
    fail_arg("selective_scan: a " + shape_str(a.shape()) + " does not match x " +
             shape_str(x.shape()));
  const std::size_t n_state = std::size_t(a.dim(1));
  if (b.ndim() != 2 || std::size_t(b.dim(0)) != t_len || std::size_t(b.dim(1)) != n_state ||
      c.shape() != b.shape())
    fail_arg("selective_scan: b " + shape_str(b.shape()) + " / c " +
             shape_str(c.shape()) + " must be [T,N] matching a " + shape_str(a.shape()));
  if (d_skip.numel() != d_inner)
    fail_arg("selective_scan: d_skip " + shape_str(d_skip.shape()) +
             " does not match channels of " + shape_str(x.shape()));

  Tensor out = Tensor::zeros(x.shape());
  const bool taped = tape_active({&x, &delta, &a, &b, &c, &d_skip});
  auto h_all = taped ? std::make_shared<std::vector<Real>>(t_len * d_inner * n_state)
                     : nullptr;
  kernels::scan_auto(t_len, d_inner, n_state, x.data(), delta.data(), a.data(),
                     b.data(), c.data(), d_skip.data(), out.data(),
                     h_all ? h_all->data() : nullptr);
  if (taped) {
    record(out, {x, delta, a, b, c, d_skip},
           [x = x, delta = delta, a = a, b = b, c = c, d_skip = d_skip, out = out.detached(), h_all, t_len,
            d_inner, n_state]() mutable {
             std::vector<Real> dx(t_len * d_inner, Real(0));
             std::vector<Real> ddelta(t_len * d_inner, Real(0));
             std::vector<Real> da(d_inner * n_state, Real(0));
             std::vector<Real> db(t_len * n_state, Real(0));
             std::vector<Real> dc(t_len * n_state, Real(0));
             std::vector<Real> dd(d_inner, Real(0));
             kernels::scan_backward(t_len, d_inner, n_state, x.data(),
                                    delta.data(), a.data(), b.data(), c.data(),
                                    d_skip.data(), h_all->data(),
                                    out.grad().data(), dx.data(), ddelta.data(),
                                    da.data(), db.data(), dc.data(), dd.data());
             if (x.on_tape()) x.accumulate_grad(dx.data(), dx.size());
             if (delta.on_tape()) delta.accumulate_grad(ddelta.data(), ddelta.size());
             if (a.on_tape()) a.accumulate_grad(da.data(), da.size());
             if (b.on_tape()) b.accumulate_grad(db.data(), db.size());
             if (c.on_tape()) c.accumulate_grad(dc.data(), dc.size());
             if (d_skip.on_tape()) d_skip.accumulate_grad(dd.data(), dd.size());
           });
  }
  return out;
}

}  // namespace emochat
