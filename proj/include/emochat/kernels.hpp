#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

#include "emochat/common.hpp"

// Raw numeric kernels. Each parallel kernel has a serial reference twin used
// as the test oracle and in kernel_bench. Parallel kernels assign every
// output element to exactly one thread with a fixed inner summation order, so
// results do not depend on the schedule.

namespace emochat::kernels {

enum class MatmulMode { NN, NT, TN };

// C[m,n] = A op B (+ C if accumulate). NN: A[m,k]*B[k,n]; NT: A[m,k]*B[n,k]^T;
// TN: A[k,m]^T*B[k,n] (pass m as the rows of the *output*).
void matmul_serial(MatmulMode mode, std::size_t m, std::size_t k, std::size_t n,
                   const Real* a, const Real* b, Real* c, bool accumulate);
void matmul(MatmulMode mode, std::size_t m, std::size_t k, std::size_t n,
            const Real* a, const Real* b, Real* c, bool accumulate);

// exp for the scan inner loops. The float build uses a branch-free
// polynomial (exponent splice + degree-5 minimax on the fraction, relative
// error ~2e-7, auto-vectorizable); the 64-bit verification build keeps libm.
inline Real scan_exp(Real x) {
#ifdef EMOCHAT_REAL64
  return std::exp(x);
#else
  if (x > 88.0f) return std::numeric_limits<float>::infinity();
  x = x < -87.0f ? -87.0f : x;
  const float kf = std::floor(x * 1.442695040888963f + 0.5f);
  // r = x - k ln2, with ln2 split for precision; r in [-ln2/2, ln2/2]
  float r = x - kf * 0.693359375f;
  r -= kf * -2.12194440e-4f;
  const float p =
      1.0f +
      r * (1.0f +
           r * (0.5f +
                r * (0.16666666666f +
                     r * (0.04166666666f +
                          r * (0.00833333333f + r * 0.00138888888f)))));
  const auto bits = std::uint32_t(std::int32_t(kf) + 127) << 23;
  return p * std::bit_cast<float>(bits);
#endif
}

// Discretization of the continuous state matrix for one step:
// a_bar = exp(delta * a), b_bar = delta * b.
inline void discretize(Real delta, Real a, Real b, Real& a_bar, Real& b_bar) {
  a_bar = scan_exp(delta * a);
  b_bar = delta * b;
}

// Selective scan over a [T, D] input with per-step delta [T, D], diagonal
// state matrix a [D, N], input/readout projections b, c [T, N] and skip
// gain d_skip [D]:
//   h_t = exp(delta_t * a) (.) h_{t-1} + (delta_t * b_t) * x_t      (h_0 = 0)
//   y_t[d] = <c_t, h_t[d,:]> + d_skip[d] * x_t[d]
// h_all, when non-null, receives every state [T, D, N] (needed for backward).
// Throws if a non-finite value appears, naming the timestep.
void scan_ref(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
              const Real* x, const Real* delta, const Real* a, const Real* b,
              const Real* c, const Real* d_skip, Real* y, Real* h_all);

// Time-blocked variant: blocks of `chunk` steps are summarized in parallel
// (diagonal transition => the block transform stays elementwise), carries are
// composed serially, then each block rescans from its carry. Equal to
// scan_ref up to float reassociation.
void scan_chunked(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                  const Real* x, const Real* delta, const Real* a,
                  const Real* b, const Real* c, const Real* d_skip, Real* y,
                  Real* h_all, std::size_t chunk);

// Work-efficient parallel variant: channels are independent, so each runs its
// full sequential recurrence on one thread. Bit-identical to scan_ref.
void scan_channels(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                   const Real* x, const Real* delta, const Real* a,
                   const Real* b, const Real* c, const Real* d_skip, Real* y,
                   Real* h_all);

// Dispatch: channel parallelism when there are enough channels to feed the
// cores without the blocked variant's duplicated work, time blocks otherwise.
void scan_auto(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
               const Real* x, const Real* delta, const Real* a, const Real* b,
               const Real* c, const Real* d_skip, Real* y, Real* h_all);

// Reverse-mode adjoints for the scan. Requires h_all from the forward pass.
// All gradient buffers are accumulated into (callers zero-init).
void scan_backward(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                   const Real* x, const Real* delta, const Real* a,
                   const Real* b, const Real* c, const Real* d_skip,
                   const Real* h_all, const Real* dy, Real* dx, Real* ddelta,
                   Real* da, Real* db, Real* dc, Real* dd_skip);

// Work threshold below which parallel kernels stay serial.
inline constexpr std::size_t kParallelMinWork = 1024 * 1024;

}  // namespace emochat::kernels
