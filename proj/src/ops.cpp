#include "nsrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "nsrf/check.hpp"

namespace nsrf::ad {
namespace {

Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape && tape != t->tape()) fail("operands are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

Tensor make_result(Tape* tape, Shape shape, std::vector<double> vals, std::vector<int> inputs,
                   BackwardFn fn) {
  if (!tape) return Tensor(std::move(shape), std::move(vals));
  return tape->record(std::move(shape), std::move(vals), std::move(inputs), std::move(fn));
}

// C = A*B (+ bias per row when given), accumulated in ascending-k order per
// output element. Every row runs the identical instruction sequence, so a
// row's bits depend only on that row of A — a batch of one matches the same
// row inside a larger batch exactly. All products here (and the backward
// helpers below) are plain fixed-order loops on purpose: library kernels
// pick SIMD paths based on runtime buffer alignment, which reassociates
// sums and makes results vary run to run.
void row_independent_gemm(const double* a, const double* b, const double* bias, double* c,
                          int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (bias)
      std::copy(bias, bias + n, crow);
    else
      std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B^T with B[k x n]; B is transposed into scratch so
// the inner loop stays contiguous. Fixed accumulation order per element.
void gemm_abt_accum(const double* a, const double* b, double* c, int64_t m, int64_t n,
                    int64_t k) {
  std::vector<double> bt(static_cast<size_t>(n * k));
  for (int64_t r = 0; r < k; ++r)
    for (int64_t j = 0; j < n; ++j) bt[static_cast<size_t>(j * k + r)] = b[r * n + j];
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const double s = arow[j];
      const double* btrow = bt.data() + j * k;
      for (int64_t kk = 0; kk < k; ++kk) crow[kk] += s * btrow[kk];
    }
  }
}

// C[k x n] += A^T * G with A[m x k], G[m x n]. Fixed accumulation order.
void gemm_atb_accum(const double* a, const double* g, double* c, int64_t m, int64_t k,
                    int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double s = arow[kk];
      double* crow = c + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += s * grow[j];
    }
  }
}

// C[n] += column sums of G[m x n], rows in ascending order.
void colsum_accum(const double* g, double* c, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (int64_t j = 0; j < n; ++j) c[j] += grow[j];
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow for large |x|.
double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void softmax_row(const double* x, double* y, int64_t n) {
  double m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    z += y[i];
  }
  for (int64_t i = 0; i < n; ++i) y[i] /= z;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape()))
    fail("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape()));
}

void check_rank2(const char* op, const Tensor& t, const char* which) {
  if (t.rank() != 2) fail("{}: {} must be rank 2, got {}", op, which, shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const int64_t n = a.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = a.at(i) + b.at(i);
  const int ia = a.node(), ib = b.node();
  return make_result(tape_of({&a, &b}), a.shape(), std::move(v), {ia, ib},
                     [ia, ib, n](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ia))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i];
                       if (double* g = ctx.grad(ib))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const int64_t n = a.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = a.at(i) - b.at(i);
  const int ia = a.node(), ib = b.node();
  return make_result(tape_of({&a, &b}), a.shape(), std::move(v), {ia, ib},
                     [ia, ib, n](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ia))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i];
                       if (double* g = ctx.grad(ib))
                         for (int64_t i = 0; i < n; ++i) g[i] -= dout[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const int64_t n = a.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = a.at(i) * b.at(i);
  const int ia = a.node(), ib = b.node();
  return make_result(tape_of({&a, &b}), a.shape(), std::move(v), {ia, ib},
                     [ia, ib, n, a, b](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ia))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i] * b.at(i);
                       if (double* g = ctx.grad(ib))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i] * a.at(i);
                     });
}

Tensor exp(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = std::exp(x.at(i));
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i] * std::exp(x.at(i));
                     });
}

Tensor log(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = std::log(x.at(i));
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i] / x.at(i);
                     });
}

Tensor relu(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = std::max(x.at(i), 0.0);
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i)
                           if (x.at(i) > 0.0) g[i] += dout[i];
                     });
}

Tensor softplus(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = stable_softplus(x.at(i));
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i] * stable_sigmoid(x.at(i));
                     });
}

Tensor sigmoid(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = stable_sigmoid(x.at(i));
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) {
                           const double s = stable_sigmoid(x.at(i));
                           g[i] += dout[i] * s * (1.0 - s);
                         }
                     });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double k) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = k * x.at(i);
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, k](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += k * dout[i];
                     });
}

Tensor add_scalar(const Tensor& x, double k) {
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = x.at(i) + k;
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i];
                     });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  NSRF_CHECK(lo <= hi, "clamp: lo {} > hi {}", lo, hi);
  const int64_t n = x.numel();
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = std::clamp(x.at(i), lo, hi);
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, n, lo, hi, x](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i)
                           if (x.at(i) >= lo && x.at(i) <= hi) g[i] += dout[i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2("matmul", a, "lhs");
  check_rank2("matmul", b, "rhs");
  if (a.dim(1) != b.dim(0))
    fail("matmul: inner dims disagree, {} vs {}", shape_str(a.shape()), shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  row_independent_gemm(a.data(), b.data(), nullptr, v.data(), m, k, n);
  const int ia = a.node(), ib = b.node();
  return make_result(tape_of({&a, &b}), {m, n}, std::move(v), {ia, ib},
                     [ia, ib, m, k, n, a, b](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ia)) gemm_abt_accum(dout, b.data(), g, m, n, k);
                       if (double* g = ctx.grad(ib)) gemm_atb_accum(a.data(), dout, g, m, k, n);
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2("linear", x, "input");
  check_rank2("linear", w, "weight");
  if (b.rank() != 1) fail("linear: bias must be rank 1, got {}", shape_str(b.shape()));
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
    fail("linear: shapes disagree, x {} w {} b {}", shape_str(x.shape()), shape_str(w.shape()),
         shape_str(b.shape()));
  const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  row_independent_gemm(x.data(), w.data(), b.data(), v.data(), m, k, n);
  const int ix = x.node(), iw = w.node(), ib = b.node();
  return make_result(tape_of({&x, &w, &b}), {m, n}, std::move(v), {ix, iw, ib},
                     [ix, iw, ib, m, k, n, x, w](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix)) gemm_abt_accum(dout, w.data(), g, m, n, k);
                       if (double* g = ctx.grad(iw)) gemm_atb_accum(x.data(), dout, g, m, k, n);
                       if (double* g = ctx.grad(ib)) colsum_accum(dout, g, m, n);
                     });
}

Tensor add_rowvec(const Tensor& x, const Tensor& row) {
  check_rank2("add_rowvec", x, "input");
  if (row.rank() != 1 || row.dim(0) != x.dim(1))
    fail("add_rowvec: row {} does not match input {}", shape_str(row.shape()),
         shape_str(x.shape()));
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < n; ++c) v[static_cast<size_t>(r * n + c)] = x.at(r * n + c) + row.at(c);
  const int ix = x.node(), ir = row.node();
  return make_result(tape_of({&x, &row}), x.shape(), std::move(v), {ix, ir},
                     [ix, ir, m, n](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < m * n; ++i) g[i] += dout[i];
                       if (double* g = ctx.grad(ir))
                         for (int64_t r = 0; r < m; ++r)
                           for (int64_t c = 0; c < n; ++c) g[c] += dout[r * n + c];
                     });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  check_rank2("concat", a, "lhs");
  check_rank2("concat", b, "rhs");
  NSRF_CHECK(axis == 0 || axis == 1, "concat: axis must be 0 or 1, got {}", axis);
  const int other = 1 - axis;
  if (a.dim(other) != b.dim(other))
    fail("concat: shapes {} and {} disagree off axis {}", shape_str(a.shape()),
         shape_str(b.shape()), axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] += b.dim(axis);
  const int64_t m = out_shape[0], n = out_shape[1];
  std::vector<double> v(static_cast<size_t>(m * n));
  if (axis == 0) {
    std::copy(a.data(), a.data() + a.numel(), v.begin());
    std::copy(b.data(), b.data() + b.numel(),
              v.begin() + static_cast<std::ptrdiff_t>(a.numel()));
  } else {
    const int64_t na = a.dim(1), nb = b.dim(1);
    for (int64_t r = 0; r < m; ++r) {
      std::copy(a.data() + r * na, a.data() + (r + 1) * na, v.begin() + r * n);
      std::copy(b.data() + r * nb, b.data() + (r + 1) * nb, v.begin() + r * n + na);
    }
  }
  const int ia = a.node(), ib = b.node();
  const int64_t na = a.dim(axis == 0 ? 0 : 1);
  const int64_t a_numel = a.numel(), b_numel = b.numel();
  return make_result(
      tape_of({&a, &b}), out_shape, std::move(v), {ia, ib},
      [ia, ib, axis, m, n, na, a_numel, b_numel](const double* dout, BackCtx& ctx) {
        if (axis == 0) {
          if (double* g = ctx.grad(ia))
            for (int64_t i = 0; i < a_numel; ++i) g[i] += dout[i];
          if (double* g = ctx.grad(ib))
            for (int64_t i = 0; i < b_numel; ++i) g[i] += dout[a_numel + i];
        } else {
          const int64_t nb = n - na;
          if (double* g = ctx.grad(ia))
            for (int64_t r = 0; r < m; ++r)
              for (int64_t c = 0; c < na; ++c) g[r * na + c] += dout[r * n + c];
          if (double* g = ctx.grad(ib))
            for (int64_t r = 0; r < m; ++r)
              for (int64_t c = 0; c < nb; ++c) g[r * nb + c] += dout[r * n + na + c];
        }
      });
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end) {
  check_rank2("slice_cols", x, "input");
  const int64_t m = x.dim(0), n = x.dim(1);
  NSRF_CHECK(0 <= begin && begin < end && end <= n, "slice_cols: [{}, {}) out of {} columns",
             begin, end, n);
  const int64_t w = end - begin;
  std::vector<double> v(static_cast<size_t>(m * w));
  for (int64_t r = 0; r < m; ++r)
    std::copy(x.data() + r * n + begin, x.data() + r * n + end, v.begin() + r * w);
  const int ix = x.node();
  return make_result(tape_of({&x}), {m, w}, std::move(v), {ix},
                     [ix, m, n, w, begin](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t r = 0; r < m; ++r)
                           for (int64_t c = 0; c < w; ++c)
                             g[r * n + begin + c] += dout[r * w + c];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const int64_t n = shape_numel(shape);
  if (n != x.numel())
    fail("reshape: {} has {} elements, target {} has {}", shape_str(x.shape()), x.numel(),
         shape_str(shape), n);
  std::vector<double> v(x.values());
  const int ix = x.node();
  return make_result(tape_of({&x}), std::move(shape), std::move(v), {ix},
                     [ix, n](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t i = 0; i < n; ++i) g[i] += dout[i];
                     });
}

Tensor sum(const Tensor& x) {
  const int64_t n = x.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x.at(i);
  const int ix = x.node();
  return make_result(tape_of({&x}), {1}, {s}, {ix}, [ix, n](const double* dout, BackCtx& ctx) {
    if (double* g = ctx.grad(ix))
      for (int64_t i = 0; i < n; ++i) g[i] += dout[0];
  });
}

namespace {

Tensor axis_reduce(const Tensor& x, int axis, bool mean, const char* op) {
  check_rank2(op, x, "input");
  NSRF_CHECK(axis == 0 || axis == 1, "{}: axis must be 0 or 1, got {}", op, axis);
  const int64_t m = x.dim(0), n = x.dim(1);
  const double k = mean ? 1.0 / static_cast<double>(axis == 0 ? m : n) : 1.0;
  Shape out_shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  std::vector<double> v(static_cast<size_t>(axis == 0 ? n : m), 0.0);
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < n; ++c) v[static_cast<size_t>(axis == 0 ? c : r)] += x.at(r * n + c);
  for (double& e : v) e *= k;
  const int ix = x.node();
  return make_result(tape_of({&x}), std::move(out_shape), std::move(v), {ix},
                     [ix, m, n, axis, k](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t r = 0; r < m; ++r)
                           for (int64_t c = 0; c < n; ++c)
                             g[r * n + c] += k * dout[axis == 0 ? c : r];
                     });
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) { return axis_reduce(x, axis, false, "sum_axis"); }

Tensor mean_axis(const Tensor& x, int axis) { return axis_reduce(x, axis, true, "mean_axis"); }

Tensor softmax(const Tensor& x) {
  check_rank2("softmax", x, "input");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  for (int64_t r = 0; r < m; ++r) softmax_row(x.data() + r * n, v.data() + r * n, n);
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, m, n, x](const double* dout, BackCtx& ctx) {
                       double* g = ctx.grad(ix);
                       if (!g) return;
                       std::vector<double> y(static_cast<size_t>(n));
                       for (int64_t r = 0; r < m; ++r) {
                         softmax_row(x.data() + r * n, y.data(), n);
                         double dot = 0.0;
                         for (int64_t c = 0; c < n; ++c) dot += dout[r * n + c] * y[static_cast<size_t>(c)];
                         for (int64_t c = 0; c < n; ++c)
                           g[r * n + c] += y[static_cast<size_t>(c)] * (dout[r * n + c] - dot);
                       }
                     });
}

Tensor row_gather(const Tensor& x, const std::vector<int64_t>& cols) {
  check_rank2("row_gather", x, "input");
  const int64_t m = x.dim(0), n = x.dim(1);
  NSRF_CHECK(static_cast<int64_t>(cols.size()) == m, "row_gather: {} indices for {} rows",
             cols.size(), m);
  std::vector<double> v(static_cast<size_t>(m));
  for (int64_t r = 0; r < m; ++r) {
    const int64_t c = cols[static_cast<size_t>(r)];
    NSRF_CHECK(0 <= c && c < n, "row_gather: index {} out of {} columns at row {}", c, n, r);
    v[static_cast<size_t>(r)] = x.at(r * n + c);
  }
  const int ix = x.node();
  return make_result(tape_of({&x}), {m, 1}, std::move(v), {ix},
                     [ix, m, n, cols](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(ix))
                         for (int64_t r = 0; r < m; ++r)
                           g[r * n + cols[static_cast<size_t>(r)]] += dout[r];
                     });
}

Tensor cumsum_exclusive_rows(const Tensor& x) {
  check_rank2("cumsum_exclusive_rows", x, "input");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  for (int64_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (int64_t c = 0; c < n; ++c) {
      v[static_cast<size_t>(r * n + c)] = acc;
      acc += x.at(r * n + c);
    }
  }
  const int ix = x.node();
  return make_result(tape_of({&x}), x.shape(), std::move(v), {ix},
                     [ix, m, n](const double* dout, BackCtx& ctx) {
                       double* g = ctx.grad(ix);
                       if (!g) return;
                       for (int64_t r = 0; r < m; ++r) {
                         double suffix = 0.0;
                         for (int64_t c = n - 1; c >= 0; --c) {
                           g[r * n + c] += suffix;
                           suffix += dout[r * n + c];
                         }
                       }
                     });
}

Tensor weighted_sum_rows(const Tensor& w, const Tensor& v) {
  check_rank2("weighted_sum_rows", w, "weights");
  check_rank2("weighted_sum_rows", v, "values");
  const int64_t r_count = w.dim(0), p = w.dim(1), m = v.dim(1);
  if (v.dim(0) != r_count * p)
    fail("weighted_sum_rows: weights {} expect {} value rows, got {}", shape_str(w.shape()),
         r_count * p, v.dim(0));
  std::vector<double> out(static_cast<size_t>(r_count * m), 0.0);
  for (int64_t r = 0; r < r_count; ++r)
    for (int64_t j = 0; j < p; ++j) {
      const double wj = w.at(r * p + j);
      const double* row = v.data() + (r * p + j) * m;
      double* dst = out.data() + r * m;
      for (int64_t c = 0; c < m; ++c) dst[c] += wj * row[c];
    }
  const int iw = w.node(), iv = v.node();
  return make_result(tape_of({&w, &v}), {r_count, m}, std::move(out), {iw, iv},
                     [iw, iv, r_count, p, m, w, v](const double* dout, BackCtx& ctx) {
                       if (double* g = ctx.grad(iw))
                         for (int64_t r = 0; r < r_count; ++r)
                           for (int64_t j = 0; j < p; ++j) {
                             const double* row = v.data() + (r * p + j) * m;
                             double dot = 0.0;
                             for (int64_t c = 0; c < m; ++c) dot += dout[r * m + c] * row[c];
                             g[r * p + j] += dot;
                           }
                       if (double* g = ctx.grad(iv))
                         for (int64_t r = 0; r < r_count; ++r)
                           for (int64_t j = 0; j < p; ++j) {
                             const double wj = w.at(r * p + j);
                             double* dst = g + (r * p + j) * m;
                             for (int64_t c = 0; c < m; ++c) dst[c] += wj * dout[r * m + c];
                           }
                     });
}

Tensor mean_pool_sorted(const std::vector<Tensor>& xs) {
  NSRF_CHECK(!xs.empty(), "mean_pool_sorted: no inputs");
  for (size_t k = 1; k < xs.size(); ++k)
    if (!same_shape(xs[0].shape(), xs[k].shape()))
      fail("mean_pool_sorted: input {} is {}, expected {}", k, shape_str(xs[k].shape()),
           shape_str(xs[0].shape()));
  const size_t count = xs.size();
  const int64_t n = xs[0].numel();
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<const double*> ptrs(count);
  for (size_t k = 0; k < count; ++k) ptrs[k] = xs[k].data();
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<double> buf(count);
  for (int64_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < count; ++k) buf[k] = ptrs[k][i];
    std::sort(buf.begin(), buf.end());
    // Pairwise tree reduction over the sorted addends: the sum is a fixed
    // function of the multiset of values, independent of input order.
    size_t len = count;
    while (len > 1) {
      const size_t half = len / 2;
      for (size_t j = 0; j < half; ++j) buf[j] = buf[2 * j] + buf[2 * j + 1];
      size_t next = half;
      if (len % 2 != 0) buf[next++] = buf[len - 1];
      len = next;
    }
    out[static_cast<size_t>(i)] = buf[0] * inv;
  }
  std::vector<const Tensor*> operands;
  operands.reserve(count);
  std::vector<int> ids(count);
  for (size_t k = 0; k < count; ++k) {
    operands.push_back(&xs[k]);
    ids[k] = xs[k].node();
  }
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->on_tape()) continue;
    if (tape && tape != t->tape()) fail("operands are recorded on different tapes");
    tape = t->tape();
  }
  return make_result(tape, xs[0].shape(), std::move(out), ids,
                     [ids, n, inv](const double* dout, BackCtx& ctx) {
                       for (int id : ids)
                         if (double* g = ctx.grad(id))
                           for (int64_t i = 0; i < n; ++i) g[i] += dout[i] * inv;
                     });
}

Tensor bilinear_gather(const Tensor& map, const GatherPlan& plan) {
  check_rank2("bilinear_gather", map, "map");
  const int64_t rows = plan.rows, src_rows = map.dim(0), k = map.dim(1);
  NSRF_CHECK(static_cast<int64_t>(plan.index.size()) == rows * 4 &&
                 static_cast<int64_t>(plan.weight.size()) == rows * 4,
             "bilinear_gather: plan arrays must hold {} entries", rows * 4);
  for (int64_t i = 0; i < rows * 4; ++i) {
    const int64_t idx = plan.index[static_cast<size_t>(i)];
    NSRF_CHECK(idx >= -1 && idx < src_rows, "bilinear_gather: map row {} out of {}", idx,
               src_rows);
  }
  std::vector<double> out(static_cast<size_t>(rows * k), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < 4; ++j) {
      const int64_t idx = plan.index[static_cast<size_t>(r * 4 + j)];
      if (idx < 0) continue;
      const double wj = plan.weight[static_cast<size_t>(r * 4 + j)];
      const double* src = map.data() + idx * k;
      double* dst = out.data() + r * k;
      for (int64_t c = 0; c < k; ++c) dst[c] += wj * src[c];
    }
  const int im = map.node();
  return make_result(tape_of({&map}), {rows, k}, std::move(out), {im},
                     [im, rows, k, plan](const double* dout, BackCtx& ctx) {
                       double* g = ctx.grad(im);
                       if (!g) return;
                       for (int64_t r = 0; r < rows; ++r)
                         for (int j = 0; j < 4; ++j) {
                           const int64_t idx = plan.index[static_cast<size_t>(r * 4 + j)];
                           if (idx < 0) continue;
                           const double wj = plan.weight[static_cast<size_t>(r * 4 + j)];
                           const double* src = dout + r * k;
                           double* dst = g + idx * k;
                           for (int64_t c = 0; c < k; ++c) dst[c] += wj * src[c];
                         }
                     });
}

namespace {

// Patch matrix of a zero-padded 3x3 window walk: row (oy*wo+ox) holds the
// 9*cin window values around output pixel (oy, ox), ordered (dy, dx, ci).
std::vector<double> im2col3x3(const double* img, int64_t h, int64_t w, int64_t cin, int stride,
                              int64_t ho, int64_t wo) {
  std::vector<double> patches(static_cast<size_t>(ho * wo * cin * 9), 0.0);
  for (int64_t oy = 0; oy < ho; ++oy)
    for (int64_t ox = 0; ox < wo; ++ox) {
      double* row = patches.data() + (oy * wo + ox) * cin * 9;
      for (int64_t dy = 0; dy < 3; ++dy) {
        const int64_t iy = oy * stride + dy - 1;
        if (iy < 0 || iy >= h) continue;
        for (int64_t dx = 0; dx < 3; ++dx) {
          const int64_t ix = ox * stride + dx - 1;
          if (ix < 0 || ix >= w) continue;
          const double* src = img + (iy * w + ix) * cin;
          std::copy(src, src + cin, row + (dy * 3 + dx) * cin);
        }
      }
    }
  return patches;
}

}  // namespace

Tensor conv3x3(const Tensor& image, const Tensor& kernel, const Tensor& bias, int stride) {
  if (image.rank() != 3)
    fail("conv3x3: image must be [h x w x c], got {}", shape_str(image.shape()));
  check_rank2("conv3x3", kernel, "kernel");
  NSRF_CHECK(bias.rank() == 1, "conv3x3: bias must be rank 1, got {}", shape_str(bias.shape()));
  NSRF_CHECK(stride >= 1, "conv3x3: stride must be positive, got {}", stride);
  const int64_t h = image.dim(0), w = image.dim(1), cin = image.dim(2);
  const int64_t cout = kernel.dim(0);
  if (kernel.dim(1) != cin * 9)
    fail("conv3x3: kernel {} does not match {} input channels", shape_str(kernel.shape()), cin);
  if (bias.dim(0) != cout)
    fail("conv3x3: bias {} does not match {} output channels", shape_str(bias.shape()), cout);
  const int64_t ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  std::vector<double> patches = im2col3x3(image.data(), h, w, cin, stride, ho, wo);
  std::vector<double> v(static_cast<size_t>(ho * wo * cout));
  for (int64_t r = 0; r < ho * wo; ++r)
    std::copy(bias.data(), bias.data() + cout, v.begin() + r * cout);
  gemm_abt_accum(patches.data(), kernel.data(), v.data(), ho * wo, cin * 9, cout);
  const int ii = image.node(), ik = kernel.node(), ib = bias.node();
  return make_result(
      tape_of({&image, &kernel, &bias}), {ho, wo, cout}, std::move(v), {ii, ik, ib},
      [ii, ik, ib, h, w, cin, cout, ho, wo, stride, image, kernel](const double* dout,
                                                                   BackCtx& ctx) {
        double* gi = ctx.grad(ii);
        double* gk = ctx.grad(ik);
        double* gb = ctx.grad(ib);
        if (gk) {
          std::vector<double> patches = im2col3x3(image.data(), h, w, cin, stride, ho, wo);
          gemm_atb_accum(dout, patches.data(), gk, ho * wo, cout, cin * 9);
        }
        if (gb) colsum_accum(dout, gb, ho * wo, cout);
        if (gi) {
          std::vector<double> dpatches(static_cast<size_t>(ho * wo * cin * 9), 0.0);
          row_independent_gemm(dout, kernel.data(), nullptr, dpatches.data(), ho * wo, cout,
                               cin * 9);
          for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
              const double* row = dpatches.data() + (oy * wo + ox) * cin * 9;
              for (int64_t dy = 0; dy < 3; ++dy) {
                const int64_t iy = oy * stride + dy - 1;
                if (iy < 0 || iy >= h) continue;
                for (int64_t dx = 0; dx < 3; ++dx) {
                  const int64_t ix = ox * stride + dx - 1;
                  if (ix < 0 || ix >= w) continue;
                  double* dst = gi + (iy * w + ix) * cin;
                  const double* src = row + (dy * 3 + dx) * cin;
                  for (int64_t ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
                }
              }
            }
        }
      });
}

Tensor upsample2x_nn(const Tensor& image, int64_t out_h, int64_t out_w) {
  if (image.rank() != 3)
    fail("upsample2x_nn: image must be [h x w x c], got {}", shape_str(image.shape()));
  const int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  NSRF_CHECK(out_h >= 1 && out_h <= 2 * h && out_w >= 1 && out_w <= 2 * w,
             "upsample2x_nn: output {}x{} not reachable from {}x{}", out_h, out_w, h, w);
  std::vector<double> v(static_cast<size_t>(out_h * out_w * c));
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      const double* src = image.data() + ((y / 2) * w + x / 2) * c;
      std::copy(src, src + c, v.begin() + (y * out_w + x) * c);
    }
  const int ii = image.node();
  return make_result(tape_of({&image}), {out_h, out_w, c}, std::move(v), {ii},
                     [ii, w, c, out_h, out_w](const double* dout, BackCtx& ctx) {
                       double* g = ctx.grad(ii);
                       if (!g) return;
                       for (int64_t y = 0; y < out_h; ++y)
                         for (int64_t x = 0; x < out_w; ++x) {
                           double* dst = g + ((y / 2) * w + x / 2) * c;
                           const double* src = dout + (y * out_w + x) * c;
                           for (int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                         }
                     });
}

}  // namespace nsrf::ad
