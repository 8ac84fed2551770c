// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0

#include "protonorm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <string>
#include <tuple>
#include <utility>

#include "protonorm/errors.hpp"

namespace protonorm::ops {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// C = A . B for row-major [m, k] x [k, n]. Register tiles of 4 rows by 4
// columns; every output still sums over k in ascending order from 0.0, so the
// result is bitwise the same as the plain triple loop.
typedef double Pair __attribute__((vector_size(16)));

void gemm(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kRows = 4, kCols = 4;
  auto scalar = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
    C[i * n + j] = s;
  };
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      Pair acc[kRows][2] = {};
      for (std::size_t p = 0; p < k; ++p) {
        Pair b[2];
        std::memcpy(b, B + p * n + j, sizeof(b));
        for (std::size_t r = 0; r < kRows; ++r) {
          const double a = A[(i + r) * k + p];
          const Pair av = {a, a};
          acc[r][0] += av * b[0];
          acc[r][1] += av * b[1];
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) std::memcpy(C + (i + r) * n + j, acc[r], sizeof(acc[r]));
    }
    for (std::size_t r = i; r < i + kRows; ++r)
      for (std::size_t jj = j; jj < n; ++jj) scalar(r, jj);
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) scalar(i, j);
}

// [outer, len, inner] view of a tensor around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

// How an operand's flat offset follows from the result's flat index i.
// kTile: operand spans the trailing dims (offset i % period). kRepeat: it
// spans the leading dims (offset i / period). kTable: look it up.
enum class Access { kFull, kTile, kRepeat, kTable };

struct BroadcastPlan {
  Shape out;
  bool trivial = false;  // identical shapes
  Access a_access = Access::kTable, b_access = Access::kTable;
  std::size_t a_period = 1, b_period = 1;
  // Flat offsets per result element; filled only when some operand is kTable
  // or when requested.
  std::vector<std::size_t> a_offsets;
  std::vector<std::size_t> b_offsets;
};

// Walks one operand's offsets in result order without division.
class OffsetCursor {
 public:
  OffsetCursor(Access access, std::size_t period, const std::vector<std::size_t>& table)
      : access_(access), period_(period), table_(table) {}

  std::size_t operator*() const { return access_ == Access::kTable ? table_[i_] : off_; }

  void advance() {
    ++i_;
    switch (access_) {
      case Access::kFull:
        ++off_;
        break;
      case Access::kTile:
        if (++off_ == period_) off_ = 0;
        break;
      case Access::kRepeat:
        if (++run_ == period_) {
          run_ = 0;
          ++off_;
        }
        break;
      case Access::kTable:
        break;
    }
  }

 private:
  Access access_;
  std::size_t period_;
  const std::vector<std::size_t>& table_;
  std::size_t i_ = 0, off_ = 0, run_ = 0;
};

// `padded` is the operand shape left-padded with 1s to the result rank.
std::pair<Access, std::size_t> classify_access(const Shape& padded, const Shape& out) {
  const std::size_t r = out.size();
  if (padded == out) return {Access::kFull, 1};
  std::size_t lead = 0;
  while (lead < r && padded[lead] == 1) ++lead;
  if (std::equal(padded.begin() + static_cast<std::ptrdiff_t>(lead), padded.end(),
                 out.begin() + static_cast<std::ptrdiff_t>(lead))) {
    std::size_t period = 1;
    for (std::size_t i = lead; i < r; ++i) period *= out[i];
    return {Access::kTile, std::max<std::size_t>(period, 1)};
  }
  std::size_t trail = r;
  while (trail > 0 && padded[trail - 1] == 1) --trail;
  if (std::equal(padded.begin(), padded.begin() + static_cast<std::ptrdiff_t>(trail), out.begin())) {
    std::size_t period = 1;
    for (std::size_t i = trail; i < r; ++i) period *= out[i];
    return {Access::kRepeat, std::max<std::size_t>(period, 1)};
  }
  return {Access::kTable, 1};
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, bool tables = false) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.trivial = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape sa(r, 1), sb(r, 1);
  std::copy(a.begin(), a.end(), sa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), sb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  plan.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (sa[i] == sb[i] || sb[i] == 1) {
      plan.out[i] = sa[i];
    } else if (sa[i] == 1) {
      plan.out[i] = sb[i];
    } else {
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
  }
  std::vector<std::size_t> stride_a(r, 0), stride_b(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = r; i-- > 0;) {
    stride_a[i] = sa[i] == 1 ? 0 : acc_a;
    stride_b[i] = sb[i] == 1 ? 0 : acc_b;
    acc_a *= sa[i];
    acc_b *= sb[i];
  }
  std::tie(plan.a_access, plan.a_period) = classify_access(sa, plan.out);
  std::tie(plan.b_access, plan.b_period) = classify_access(sb, plan.out);
  if (!tables && plan.a_access != Access::kTable && plan.b_access != Access::kTable) return plan;
  plan.a_access = plan.b_access = Access::kTable;
  const std::size_t n = numel(plan.out);
  plan.a_offsets.resize(n);
  plan.b_offsets.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off_a = 0, off_b = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.a_offsets[flat] = off_a;
    plan.b_offsets[flat] = off_b;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off_a += stride_a[d];
      off_b += stride_b[d];
      if (idx[d] < plan.out[d]) break;
      off_a -= stride_a[d] * idx[d];
      off_b -= stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  if (plan->trivial) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
  } else {
    OffsetCursor ca(plan->a_access, plan->a_period, plan->a_offsets);
    OffsetCursor cb(plan->b_access, plan->b_period, plan->b_offsets);
    for (std::size_t i = 0; i < n; ++i, ca.advance(), cb.advance()) out[i] = fwd(ad[*ca], bd[*cb]);
  }
  Tensor result(plan->out, std::move(out));
  if (should_record({&a, &b})) {
    ImplPtr ai = a.shared_impl(), bi = b.shared_impl(), oi = result.shared_impl();
    Tape::active()->record(result, [ai, bi, oi, plan, grad_a, grad_b](std::span<const double> g) {
      const std::size_t count = g.size();
      const auto& av = ai->data;
      const auto& bv = bi->data;
      const auto& ov = oi->data;
      const Access full = Access::kFull;
      if (ai->requires_grad) {
        auto ga = ai->grad_buffer();
        OffsetCursor ca(plan->trivial ? full : plan->a_access, plan->a_period, plan->a_offsets);
        OffsetCursor cb(plan->trivial ? full : plan->b_access, plan->b_period, plan->b_offsets);
        for (std::size_t i = 0; i < count; ++i, ca.advance(), cb.advance()) {
          ga[*ca] += grad_a(av[*ca], bv[*cb], ov[i], g[i]);
        }
      }
      if (bi->requires_grad) {
        auto gb = bi->grad_buffer();
        OffsetCursor ca(plan->trivial ? full : plan->a_access, plan->a_period, plan->a_offsets);
        OffsetCursor cb(plan->trivial ? full : plan->b_access, plan->b_period, plan->b_offsets);
        for (std::size_t i = 0; i < count; ++i, ca.advance(), cb.advance()) {
          gb[*cb] += grad_b(av[*ca], bv[*cb], ov[i], g[i]);
        }
      }
    });
  }
  return result;
}

// `deriv(x, y)` returns dy/dx given input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl(), oi = result.shared_impl();
    Tape::active()->record(result, [xi, oi, deriv](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->data[i], oi->data[i]);
    });
  }
  return result;
}

// Mean with one refinement pass: exact for constant inputs, and more accurate
// than a single division in general.
double refined_mean(const double* x, std::size_t len, std::size_t stride) {
  double s = 0.0;
  for (std::size_t k = 0; k < len; ++k) s += x[k * stride];
  double m = s / static_cast<double>(len);
  double c = 0.0;
  for (std::size_t k = 0; k < len; ++k) c += x[k * stride] - m;
  return m + c / static_cast<double>(len);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return g; }, [](double, double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return g; }, [](double, double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double, double g) { return g * y; },
      [](double x, double, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double, double g) { return g / y; },
      [](double, double y, double out, double g) { return -g * out / y; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double s) {
  return unary_op(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor power(const Tensor& x, double exponent) {
  return unary_op(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary_op(
      x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor result = Tensor::scalar(s);
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (double& v : gx) v += g[0];
    });
  }
  return result;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.len; ++k) {
      const double* row = xd.data() + (o * v.len + k) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  Tensor result(reduced_shape(x.shape(), ax, keepdim), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, v](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.len; ++k)
          for (std::size_t i = 0; i < v.inner; ++i) gx[(o * v.len + k) * v.inner + i] += g[o * v.inner + i];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  const auto xd = x.data();
  const std::size_t n = xd.size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  Tensor result = Tensor::scalar(refined_mean(xd.data(), n, 1));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, n](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      const double share = g[0] / static_cast<double>(n);
      for (double& v : gx) v += share;
    });
  }
  return result;
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  if (v.len == 0) throw ShapeError("mean over empty axis");
  const auto xd = x.data();
  std::vector<double> out(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i)
      out[o * v.inner + i] = refined_mean(xd.data() + o * v.len * v.inner + i, v.len, v.inner);
  Tensor result(reduced_shape(x.shape(), ax, keepdim), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, v](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      const double inv = 1.0 / static_cast<double>(v.len);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.len; ++k)
          for (std::size_t i = 0; i < v.inner; ++i) gx[(o * v.len + k) * v.inner + i] += g[o * v.inner + i] * inv;
    });
  }
  return result;
}

Tensor variance(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  if (v.len == 0) throw ShapeError("variance over empty axis");
  const auto xd = x.data();
  auto means = std::make_shared<std::vector<double>>(v.outer * v.inner);
  std::vector<double> out(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const double* base = xd.data() + o * v.len * v.inner + i;
      const double m = refined_mean(base, v.len, v.inner);
      double ss = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double d = base[k * v.inner] - m;
        ss += d * d;
      }
      (*means)[o * v.inner + i] = m;
      out[o * v.inner + i] = ss / static_cast<double>(v.len);
    }
  }
  Tensor result(reduced_shape(x.shape(), ax, keepdim), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, v, means](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      const double scale2 = 2.0 / static_cast<double>(v.len);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.len; ++k)
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t idx = (o * v.len + k) * v.inner + i;
            gx[idx] += g[o * v.inner + i] * scale2 * (xi->data[idx] - (*means)[o * v.inner + i]);
          }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Matrix product

namespace {
thread_local std::uint64_t g_matmul_macs = 0;
}  // namespace

std::uint64_t matmul_mac_count() { return g_matmul_macs; }
void reset_matmul_mac_count() { g_matmul_macs = 0; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  BroadcastPlan bp;
  try {
    bp = plan_broadcast(a_batch, b_batch, true);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch dimensions not broadcastable: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t batches = numel(bp.out);
  auto a_off = std::make_shared<std::vector<std::size_t>>(batches);
  auto b_off = std::make_shared<std::vector<std::size_t>>(batches);
  for (std::size_t t = 0; t < batches; ++t) {
    (*a_off)[t] = (bp.trivial ? t : bp.a_offsets[t]) * m * k;
    (*b_off)[t] = (bp.trivial ? t : bp.b_offsets[t]) * k * n;
  }
  Shape out_shape = bp.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  g_matmul_macs += static_cast<std::uint64_t>(batches) * m * k * n;
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t t = 0; t < batches; ++t) {
    const double* A = ad + (*a_off)[t];
    const double* B = bd + (*b_off)[t];
    gemm(A, B, out.data() + t * m * n, m, k, n);
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&a, &b})) {
    ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
    Tape::active()->record(result, [ai, bi, a_off, b_off, batches, m, k, n](std::span<const double> g) {
      const double* A0 = ai->data.data();
      const double* B0 = bi->data.data();
      if (ai->requires_grad) {
        auto ga = ai->grad_buffer();
        // dA = dC . B^T
        for (std::size_t t = 0; t < batches; ++t) {
          const double* G = g.data() + t * m * n;
          const double* B = B0 + (*b_off)[t];
          double* GA = ga.data() + (*a_off)[t];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double* grow = G + i * n;
              const double* brow = B + p * n;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              GA[i * k + p] += s;
            }
        }
      }
      if (bi->requires_grad) {
        auto gb = bi->grad_buffer();
        // dB = A^T . dC
        for (std::size_t t = 0; t < batches; ++t) {
          const double* G = g.data() + t * m * n;
          const double* A = A0 + (*a_off)[t];
          double* GB = gb.data() + (*b_off)[t];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              const double* grow = G + i * n;
              double* gbrow = GB + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, xd[base + k * v.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double e = std::exp(xd[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] /= s;
    }
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl(), oi = result.shared_impl();
    Tape::active()->record(result, [xi, oi, v](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      const auto& y = oi->data;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.len * v.inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < v.len; ++k) dot += g[base + k * v.inner] * y[base + k * v.inner];
          for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = base + k * v.inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, xd[base + k * v.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) s += std::exp(xd[base + k * v.inner] - mx);
      const double lse = std::log(s);
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] = xd[base + k * v.inner] - mx - lse;
    }
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl(), oi = result.shared_impl();
    Tape::active()->record(result, [xi, oi, v](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      const auto& y = oi->data;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.len * v.inner + i;
          double gs = 0.0;
          for (std::size_t k = 0; k < v.len; ++k) gs += g[base + k * v.inner];
          for (std::size_t k = 0; k < v.len; ++k) {
            const std::size_t idx = base + k * v.inner;
            gx[idx] += g[idx] - std::exp(y[idx]) * gs;
          }
        }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Layout

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat rank mismatch: " + to_string(p.shape()));
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != ax && p.shape()[d] != first[d]) {
        throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(p.shape()));
      }
    }
    total += p.shape()[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = total;
  const AxisView ov = axis_view(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  auto lens = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape()[ax];
    const auto pd = p.data();
    for (std::size_t o = 0; o < ov.outer; ++o)
      std::copy_n(pd.data() + o * len * ov.inner, len * ov.inner,
                  out.data() + (o * ov.len + offset) * ov.inner);
    lens->push_back(len);
    offset += len;
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record(parts)) {
    std::vector<ImplPtr> impls;
    for (const Tensor& p : parts) impls.push_back(p.shared_impl());
    Tape::active()->record(result, [impls, lens, ov](std::span<const double> g) {
      std::size_t off = 0;
      for (std::size_t t = 0; t < impls.size(); ++t) {
        const std::size_t len = (*lens)[t];
        if (impls[t]->requires_grad) {
          auto gp = impls[t]->grad_buffer();
          for (std::size_t o = 0; o < ov.outer; ++o)
            for (std::size_t q = 0; q < len * ov.inner; ++q)
              gp[o * len * ov.inner + q] += g[(o * ov.len + off) * ov.inner + q];
        }
        off += len;
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (start > end || end > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(end) + ") out of range for shape " +
                     to_string(x.shape()));
  }
  const AxisView v = axis_view(x.shape(), ax);
  const std::size_t len = end - start;
  Shape out_shape = x.shape();
  out_shape[ax] = len;
  std::vector<double> out(v.outer * len * v.inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(xd.data() + (o * v.len + start) * v.inner, len * v.inner, out.data() + o * len * v.inner);
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, v, start, len](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t q = 0; q < len * v.inner; ++q) gx[(o * v.len + start) * v.inner + q] += g[o * len * v.inner + q];
    });
  }
  return result;
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  const std::size_t a0 = normalize_axis(axis0, x.rank());
  const std::size_t a1 = normalize_axis(axis1, x.rank());
  const Shape& in_shape = x.shape();
  Shape out_shape = in_shape;
  std::swap(out_shape[a0], out_shape[a1]);
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * in_shape[d];
  std::vector<std::size_t> src_stride = in_stride;
  std::swap(src_stride[a0], src_stride[a1]);
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*source)[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      off -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*source)[i]];
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, source](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*source)[i]] += g[i];
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor gather_last(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() < 1) throw ShapeError("gather_last on a scalar");
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = cols == 0 ? 0 : x.numel() / cols;
  if (indices.size() != rows) {
    throw ShapeError("gather_last: " + std::to_string(indices.size()) + " indices for " + std::to_string(rows) +
                     " rows of " + to_string(x.shape()));
  }
  auto flat = std::make_shared<std::vector<std::size_t>>(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] >= cols) throw ShapeError("gather_last index out of range");
    (*flat)[r] = r * cols + indices[r];
    out[r] = x.data()[(*flat)[r]];
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, flat](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t r = 0; r < g.size(); ++r) gx[(*flat)[r]] += g[r];
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (double& m : *mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * (*mask)[i];
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    ImplPtr xi = x.shared_impl();
    Tape::active()->record(result, [xi, mask](std::span<const double> g) {
      auto gx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return result;
}

}  // namespace protonorm::ops
