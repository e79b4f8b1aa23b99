#pragma once

#include <vector>

#include "emochat/tensor.hpp"

// Differentiable ops over Tensor. All ops validate shapes up front and name
// both shapes on mismatch. Unless stated otherwise a tensor is treated as
// [rows, cols] with cols = last axis.

namespace emochat {

// b may either match a's shape or be a vector matching a's last axis
// (broadcast over rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);
Tensor neg(const Tensor& a);

// a [m,k]; b [k,n], or [n,k] with transpose_b.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor softplus(const Tensor& a);

// Last axis; max-subtracted for overflow safety.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);   // 2-D, axis 0 or 1
Tensor mean_axis(const Tensor& a, int axis);  // 2-D, axis 0 or 1

// Same data, new extents (copying; identity backward).
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);

// Row gather: out[i,:] = table[ids[i],:]. Embedding lookup.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// Element gather: out[i] = a[rows[i], cols[i]].
Tensor gather_rc(const Tensor& a, const std::vector<int>& rows,
                 const std::vector<int>& cols);

// y = x / sqrt(mean(x^2) + eps) * gain, per row.
Tensor rms_norm(const Tensor& x, const Tensor& gain, Real eps = Real(1e-5));

// Depthwise causal 1-D convolution. x [T,C], w [C,K], bias [C]:
// y[t,c] = bias[c] + sum_j w[c,j] * x[t-j,c], zero-padded on the left.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Input-dependent linear recurrence (see kernels.hpp for the exact update).
// x [T,D], delta [T,D] (positive), a [D,N] (negative), b [T,N], c [T,N],
// d_skip [D] -> y [T,D].
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& b, const Tensor& c, const Tensor& d_skip);

}  // namespace emochat
