// Copyright (c) 2026, The ProtoNorm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every function here registers its gradient on
// the active tape (if any). Binary elementwise ops broadcast NumPy-style.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "protonorm/rng.hpp"
#include "protonorm/tensor.hpp"

namespace protonorm::ops {

// Elementwise binary, broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Caller guarantees b has no zeros; see the epsilon policy at each call site.
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor scale(const Tensor& x, double s);
Tensor neg(const Tensor& x);

// Elementwise unary.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor power(const Tensor& x, double exponent);
Tensor relu(const Tensor& x);
// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);

// Reductions. `axis` may be negative.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
// Population variance (divisor = axis length).
Tensor variance(const Tensor& x, int axis, bool keepdim = false);

// [..., m, k] x [..., k, n] -> [..., m, n]; batch dimensions broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Forward multiply-accumulates performed by matmul on this thread.
std::uint64_t matmul_mac_count();
void reset_matmul_mac_count();

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t end);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor reshape(const Tensor& x, Shape shape);

// out[r] = x[r, indices[r]] for x viewed as [rows, last_dim].
Tensor gather_last(const Tensor& x, std::span<const std::size_t> indices);

// Identity when !train or p == 0; otherwise zeroes each element with
// probability p and scales survivors by 1/(1-p). Draws only from `rng`.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

}  // namespace protonorm::ops

namespace protonorm {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return ops::scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return ops::scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return ops::add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }

}  // namespace protonorm
