#include "emochat/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emochat::kernels {

namespace {

inline void matmul_rows_nn(std::size_t i0, std::size_t i1, std::size_t k,
                           std::size_t n, const Real* a, const Real* b,
                           Real* c, bool accumulate) {
  for (std::size_t i = i0; i < i1; ++i) {
    Real* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, n * sizeof(Real));
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot-product loops cannot be vectorized without float reassociation, so the
// NT case first transposes b into a scratch buffer and then runs the same
// j-parallel accumulation as NN. The per-element summation order (ascending
// k) is unchanged, so results are bit-identical to the naive dot product.
thread_local std::vector<Real> t_nt_scratch;

inline const Real* transpose_to_scratch(const Real* b, std::size_t n,
                                        std::size_t k) {
  t_nt_scratch.resize(k * n);
  Real* bt = t_nt_scratch.data();
  constexpr std::size_t kTile = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += kTile)
    for (std::size_t p0 = 0; p0 < k; p0 += kTile) {
      const std::size_t j1 = std::min(n, j0 + kTile);
      const std::size_t p1 = std::min(k, p0 + kTile);
      for (std::size_t j = j0; j < j1; ++j)
        for (std::size_t p = p0; p < p1; ++p) bt[p * n + j] = b[j * k + p];
    }
  return bt;
}

// For a handful of output rows the transpose costs more than it saves; fall
// back to plain dot products.
inline void matmul_rows_nt_dots(std::size_t i0, std::size_t i1, std::size_t k,
                                std::size_t n, const Real* a, const Real* b,
                                Real* c, bool accumulate) {
  for (std::size_t i = i0; i < i1; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

inline void matmul_rows_nt(std::size_t i0, std::size_t i1, std::size_t k,
                           std::size_t n, const Real* a, const Real* bt,
                           Real* c, bool accumulate) {
  // bt is already transposed to [k, n]
  for (std::size_t i = i0; i < i1; ++i) {
    Real* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, n * sizeof(Real));
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* brow = bt + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Output rows indexed by the second dim of a: c[r,:] = sum_m a[m,r] * b[m,:].
inline void matmul_rows_tn(std::size_t r0, std::size_t r1, std::size_t k,
                           std::size_t n, const Real* a, const Real* b,
                           Real* c, std::size_t m_out, bool accumulate) {
  for (std::size_t r = r0; r < r1; ++r) {
    Real* crow = c + r * n;
    if (!accumulate) std::memset(crow, 0, n * sizeof(Real));
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[p * m_out + r];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void matmul_serial(MatmulMode mode, std::size_t m, std::size_t k,
                   std::size_t n, const Real* a, const Real* b, Real* c,
                   bool accumulate) {
  switch (mode) {
    case MatmulMode::NN: matmul_rows_nn(0, m, k, n, a, b, c, accumulate); break;
    case MatmulMode::NT:
      if (m < 4)
        matmul_rows_nt_dots(0, m, k, n, a, b, c, accumulate);
      else
        matmul_rows_nt(0, m, k, n, a, transpose_to_scratch(b, n, k), c, accumulate);
      break;
    case MatmulMode::TN: matmul_rows_tn(0, m, k, n, a, b, c, m, accumulate); break;
  }
}

void matmul(MatmulMode mode, std::size_t m, std::size_t k, std::size_t n,
            const Real* a, const Real* b, Real* c, bool accumulate) {
  if (m * k * n < kParallelMinWork || m < 16) {
    matmul_serial(mode, m, k, n, a, b, c, accumulate);
    return;
  }
  const Real* bt =
      mode == MatmulMode::NT ? transpose_to_scratch(b, n, k) : nullptr;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (long i = 0; i < long(m); ++i) {
      const auto r = std::size_t(i);
      switch (mode) {
        case MatmulMode::NN: matmul_rows_nn(r, r + 1, k, n, a, b, c, accumulate); break;
        case MatmulMode::NT: matmul_rows_nt(r, r + 1, k, n, a, bt, c, accumulate); break;
        case MatmulMode::TN: matmul_rows_tn(r, r + 1, k, n, a, b, c, m, accumulate); break;
      }
    }
  }
}

namespace {

[[noreturn]] void scan_nonfinite(std::size_t t) {
  fail("selective_scan: non-finite state at timestep " + std::to_string(t));
}

// Sequential scan of steps [t0, t1) for channel d starting from state h[N].
// Writes y rows and, when h_all is non-null, every intermediate state.
inline void scan_channel_range(std::size_t t0, std::size_t t1, std::size_t d,
                               std::size_t d_inner, std::size_t n_state,
                               const Real* x, const Real* delta, const Real* a,
                               const Real* b, const Real* c,
                               const Real* d_skip, Real* h, Real* y,
                               Real* h_all) {
  const Real* arow = a + d * n_state;
  for (std::size_t t = t0; t < t1; ++t) {
    const Real dt = delta[t * d_inner + d];
    const Real xt = x[t * d_inner + d];
    const Real* bt = b + t * n_state;
    const Real* ct = c + t * n_state;
    // state update kept free of reductions so the exp lane vectorizes
    for (std::size_t s = 0; s < n_state; ++s)
      h[s] = scan_exp(dt * arow[s]) * h[s] + (dt * bt[s]) * xt;
    Real acc = 0;
    for (std::size_t s = 0; s < n_state; ++s) acc += ct[s] * h[s];
    const Real yv = acc + d_skip[d] * xt;
    if (!std::isfinite(yv)) scan_nonfinite(t);
    y[t * d_inner + d] = yv;
    if (h_all) {
      Real* dst = h_all + (t * d_inner + d) * n_state;
      std::memcpy(dst, h, n_state * sizeof(Real));
    }
  }
}

}  // namespace

void scan_ref(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
              const Real* x, const Real* delta, const Real* a, const Real* b,
              const Real* c, const Real* d_skip, Real* y, Real* h_all) {
  std::vector<Real> h(n_state);
  for (std::size_t d = 0; d < d_inner; ++d) {
    std::fill(h.begin(), h.end(), Real(0));
    scan_channel_range(0, t_len, d, d_inner, n_state, x, delta, a, b, c,
                       d_skip, h.data(), y, h_all);
  }
}

void scan_chunked(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                  const Real* x, const Real* delta, const Real* a,
                  const Real* b, const Real* c, const Real* d_skip, Real* y,
                  Real* h_all, std::size_t chunk) {
  if (chunk == 0) chunk = 64;
  const std::size_t n_blocks = (t_len + chunk - 1) / chunk;
  if (n_blocks <= 1) {
    // Single block: plain sequential scan, parallel over channels.
#pragma omp parallel for schedule(static) if (t_len * d_inner * n_state >= kParallelMinWork)
    for (long d = 0; d < long(d_inner); ++d) {
      std::vector<Real> h(n_state, Real(0));
      scan_channel_range(0, t_len, std::size_t(d), d_inner, n_state, x, delta,
                         a, b, c, d_skip, h.data(), y, h_all);
    }
    return;
  }

  // Pass 1: per-block summaries. With a diagonal transition the composite
  // block transform is elementwise: h_out = prod_a (.) h_in + acc_b.
  std::vector<Real> prod_a(n_blocks * d_inner * n_state);
  std::vector<Real> acc_b(n_blocks * d_inner * n_state);
#pragma omp parallel for collapse(2) schedule(static)
  for (long blk = 0; blk < long(n_blocks); ++blk) {
    for (long dd = 0; dd < long(d_inner); ++dd) {
      const std::size_t d = std::size_t(dd);
      const std::size_t t0 = std::size_t(blk) * chunk;
      const std::size_t t1 = std::min(t_len, t0 + chunk);
      Real* pa = prod_a.data() + (std::size_t(blk) * d_inner + d) * n_state;
      Real* ab = acc_b.data() + (std::size_t(blk) * d_inner + d) * n_state;
      for (std::size_t s = 0; s < n_state; ++s) {
        pa[s] = Real(1);
        ab[s] = Real(0);
      }
      const Real* arow = a + d * n_state;
      for (std::size_t t = t0; t < t1; ++t) {
        const Real dt = delta[t * d_inner + d];
        const Real xt = x[t * d_inner + d];
        const Real* bt = b + t * n_state;
        for (std::size_t s = 0; s < n_state; ++s) {
          const Real a_bar = scan_exp(dt * arow[s]);
          ab[s] = a_bar * ab[s] + (dt * bt[s]) * xt;
          pa[s] *= a_bar;
        }
      }
    }
  }

  // Pass 2: serial carry composition across blocks.
  std::vector<Real> carry(n_blocks * d_inner * n_state, Real(0));
  for (std::size_t blk = 1; blk < n_blocks; ++blk) {
    const Real* prev_carry = carry.data() + (blk - 1) * d_inner * n_state;
    const Real* pa = prod_a.data() + (blk - 1) * d_inner * n_state;
    const Real* ab = acc_b.data() + (blk - 1) * d_inner * n_state;
    Real* cur = carry.data() + blk * d_inner * n_state;
    for (std::size_t i = 0; i < d_inner * n_state; ++i)
      cur[i] = pa[i] * prev_carry[i] + ab[i];
  }

  // Pass 3: rescan each block from its carry-in.
#pragma omp parallel for collapse(2) schedule(static)
  for (long blk = 0; blk < long(n_blocks); ++blk) {
    for (long dd = 0; dd < long(d_inner); ++dd) {
      const std::size_t d = std::size_t(dd);
      const std::size_t t0 = std::size_t(blk) * chunk;
      const std::size_t t1 = std::min(t_len, t0 + chunk);
      std::vector<Real> h(n_state);
      const Real* cin = carry.data() + (std::size_t(blk) * d_inner + d) * n_state;
      std::copy(cin, cin + n_state, h.begin());
      scan_channel_range(t0, t1, d, d_inner, n_state, x, delta, a, b, c,
                         d_skip, h.data(), y, h_all);
    }
  }
}

void scan_channels(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                   const Real* x, const Real* delta, const Real* a,
                   const Real* b, const Real* c, const Real* d_skip, Real* y,
                   Real* h_all) {
#pragma omp parallel for schedule(static) if (t_len * d_inner * n_state >= kParallelMinWork)
  for (long d = 0; d < long(d_inner); ++d) {
    std::vector<Real> h(n_state, Real(0));
    scan_channel_range(0, t_len, std::size_t(d), d_inner, n_state, x, delta, a,
                       b, c, d_skip, h.data(), y, h_all);
  }
}

void scan_auto(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
               const Real* x, const Real* delta, const Real* a, const Real* b,
               const Real* c, const Real* d_skip, Real* y, Real* h_all) {
  if (d_inner >= 4) {
    scan_channels(t_len, d_inner, n_state, x, delta, a, b, c, d_skip, y, h_all);
  } else {
    scan_chunked(t_len, d_inner, n_state, x, delta, a, b, c, d_skip, y, h_all, 64);
  }
}

void scan_backward(std::size_t t_len, std::size_t d_inner, std::size_t n_state,
                   const Real* x, const Real* delta, const Real* a,
                   const Real* b, const Real* c, const Real* d_skip,
                   const Real* h_all, const Real* dy, Real* dx, Real* ddelta,
                   Real* da, Real* db, Real* dc, Real* dd_skip) {
  int n_threads = 1;
#ifdef _OPENMP
#pragma omp parallel
  {
#pragma omp single
    n_threads = omp_get_num_threads();
  }
#endif
  // db/dc accumulate across channels; use per-thread scratch merged in thread
  // order so the result is stable for a fixed thread count.
  std::vector<Real> db_scratch(std::size_t(n_threads) * t_len * n_state, Real(0));
  std::vector<Real> dc_scratch(std::size_t(n_threads) * t_len * n_state, Real(0));

#pragma omp parallel
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    Real* db_local = db_scratch.data() + std::size_t(tid) * t_len * n_state;
    Real* dc_local = dc_scratch.data() + std::size_t(tid) * t_len * n_state;
    std::vector<Real> lam(n_state);
    std::vector<Real> a_bar_next(n_state);

#pragma omp for schedule(static)
    for (long dd = 0; dd < long(d_inner); ++dd) {
      const std::size_t d = std::size_t(dd);
      const Real* arow = a + d * n_state;
      std::fill(lam.begin(), lam.end(), Real(0));
      std::fill(a_bar_next.begin(), a_bar_next.end(), Real(0));
      Real dskip_acc = 0;
      for (std::size_t t = t_len; t-- > 0;) {
        const Real dt = delta[t * d_inner + d];
        const Real xt = x[t * d_inner + d];
        const Real dyv = dy[t * d_inner + d];
        const Real* bt = b + t * n_state;
        const Real* ct = c + t * n_state;
        const Real* ht = h_all + (t * d_inner + d) * n_state;
        const Real* hprev =
            t > 0 ? h_all + ((t - 1) * d_inner + d) * n_state : nullptr;

        Real ddt = 0;
        Real dxt = dyv * d_skip[d];
        dskip_acc += dyv * xt;
        Real* db_t = db_local + t * n_state;
        Real* dc_t = dc_local + t * n_state;
        Real* da_d = da + d * n_state;
        for (std::size_t s = 0; s < n_state; ++s) {
          // dL/dh_t = dy_t * c_t + a_bar_{t+1} (.) dL/dh_{t+1}
          const Real l = dyv * ct[s] + a_bar_next[s] * lam[s];
          lam[s] = l;
          dc_t[s] += dyv * ht[s];
          const Real a_bar = scan_exp(dt * arow[s]);
          const Real hp = hprev ? hprev[s] : Real(0);
          ddt += l * (arow[s] * a_bar * hp + bt[s] * xt);
          da_d[s] += l * dt * a_bar * hp;
          db_t[s] += l * dt * xt;
          dxt += l * dt * bt[s];
          a_bar_next[s] = a_bar;
        }
        ddelta[t * d_inner + d] += ddt;
        dx[t * d_inner + d] += dxt;
      }
      dd_skip[d] += dskip_acc;
    }
  }

  for (int tid = 0; tid < n_threads; ++tid) {
    const Real* db_local = db_scratch.data() + std::size_t(tid) * t_len * n_state;
    const Real* dc_local = dc_scratch.data() + std::size_t(tid) * t_len * n_state;
    for (std::size_t i = 0; i < t_len * n_state; ++i) {
      db[i] += db_local[i];
      dc[i] += dc_local[i];
    }
  }
}

}  // namespace emochat::kernels
