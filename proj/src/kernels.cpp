#include "ibt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#ifdef IBT_HAVE_OPENMP
#include <omp.h>
#endif

namespace ibt::kernels {

namespace {

#ifdef IBT_HAVE_OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif

void check_gemm(const GemmShape& s, std::size_t a, std::size_t b, std::size_t c) {
  if (a < s.m * s.k || b < s.k * s.n || c < s.m * s.n) throw std::invalid_argument("gemm: buffer too small");
}

// Rows [begin, end) of c. The p-loop order is fixed so every c(i, j) sees the
// same summation sequence regardless of how rows are split.
void gemm_rows(const GemmShape& s, const Real* a, const Real* b, Real* c, std::size_t begin, std::size_t end) {
  const std::size_t a_row = s.trans_a ? 1 : s.k;
  const std::size_t a_col = s.trans_a ? s.m : 1;
  const std::size_t b_row = s.trans_b ? 1 : s.n;
  const std::size_t b_col = s.trans_b ? s.k : 1;
  for (std::size_t i = begin; i < end; ++i) {
    Real* crow = c + i * s.n;
    if (!s.accumulate) std::fill(crow, crow + s.n, Real{0});
    for (std::size_t p = 0; p < s.k; ++p) {
      const Real aip = a[i * a_row + p * a_col];
      const Real* brow = b + p * b_row;
      if (b_col == 1) {
        for (std::size_t j = 0; j < s.n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < s.n; ++j) crow[j] += aip * brow[j * b_col];
      }
    }
  }
}

std::vector<std::size_t> prob_offsets(const AttentionShape& s) {
  std::vector<std::size_t> offsets(s.blocks.size() + 1, 0);
  for (std::size_t b = 0; b < s.blocks.size(); ++b)
    offsets[b + 1] = offsets[b] + s.blocks[b].length * s.blocks[b].length * s.heads;
  return offsets;
}

void check_attention(const AttentionShape& s) {
  if (s.heads == 0 || s.hidden % s.heads != 0) throw std::invalid_argument("attention: hidden not divisible by heads");
  if (s.key_valid.size() != s.rows) throw std::invalid_argument("attention: key mask length mismatch");
  for (const auto& blk : s.blocks)
    if (blk.offset + blk.length > s.rows) throw std::invalid_argument("attention: block out of range");
}

void attention_forward_task(const AttentionShape& s, const AttentionBlock& blk, std::size_t head,
                            std::size_t prob_base, const Real* q, const Real* k, const Real* v, Real* out,
                            Real* probs) {
  const std::size_t dh = s.head_dim();
  const std::size_t h0 = head * dh;
  const std::size_t len = blk.length;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(dh));
  Real* p_head = probs + prob_base + head * len * len;
  for (std::size_t i = 0; i < len; ++i) {
    const Real* qi = q + (blk.offset + i) * s.hidden + h0;
    Real* prow = p_head + i * len;
    Real max_logit = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      if (!s.key_valid[blk.offset + j]) {
        prow[j] = -std::numeric_limits<Real>::infinity();
        continue;
      }
      const Real* kj = k + (blk.offset + j) * s.hidden + h0;
      Real dot = 0;
      for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
      prow[j] = dot * scale;
      max_logit = std::max(max_logit, prow[j]);
    }
    Real denom = 0;
    for (std::size_t j = 0; j < len; ++j) {
      prow[j] = s.key_valid[blk.offset + j] ? std::exp(prow[j] - max_logit) : Real{0};
      denom += prow[j];
    }
    for (std::size_t j = 0; j < len; ++j) prow[j] /= denom;
    Real* oi = out + (blk.offset + i) * s.hidden + h0;
    std::fill(oi, oi + dh, Real{0});
    for (std::size_t j = 0; j < len; ++j) {
      if (prow[j] == Real{0}) continue;
      const Real* vj = v + (blk.offset + j) * s.hidden + h0;
      for (std::size_t d = 0; d < dh; ++d) oi[d] += prow[j] * vj[d];
    }
  }
}

void attention_backward_task(const AttentionShape& s, const AttentionBlock& blk, std::size_t head,
                             std::size_t prob_base, const Real* q, const Real* k, const Real* v,
                             const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv,
                             std::vector<Real>& dp) {
  const std::size_t dh = s.head_dim();
  const std::size_t h0 = head * dh;
  const std::size_t len = blk.length;
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(dh));
  const Real* p_head = probs + prob_base + head * len * len;
  dp.assign(len, Real{0});
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t ri = blk.offset + i;
    const Real* prow = p_head + i * len;
    const Real* gi = dout + ri * s.hidden + h0;
    Real weighted = 0;
    for (std::size_t j = 0; j < len; ++j) {
      const Real* vj = v + (blk.offset + j) * s.hidden + h0;
      Real* dvj = dv + (blk.offset + j) * s.hidden + h0;
      Real dot = 0;
      for (std::size_t d = 0; d < dh; ++d) {
        dot += gi[d] * vj[d];
        dvj[d] += prow[j] * gi[d];
      }
      dp[j] = dot;
      weighted += prow[j] * dot;
    }
    const Real* qi = q + ri * s.hidden + h0;
    Real* dqi = dq + ri * s.hidden + h0;
    for (std::size_t j = 0; j < len; ++j) {
      const Real ds = prow[j] * (dp[j] - weighted) * scale;
      if (ds == Real{0}) continue;
      const Real* kj = k + (blk.offset + j) * s.hidden + h0;
      Real* dkj = dk + (blk.offset + j) * s.hidden + h0;
      for (std::size_t d = 0; d < dh; ++d) {
        dqi[d] += ds * kj[d];
        dkj[d] += ds * qi[d];
      }
    }
  }
}

}  // namespace

void set_parallel(bool enabled) {
#ifdef IBT_HAVE_OPENMP
  g_parallel = enabled;
#else
  (void)enabled;
#endif
}

bool parallel_enabled() { return g_parallel; }

void set_num_threads(int threads) {
#ifdef IBT_HAVE_OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef IBT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool openmp_available() {
#ifdef IBT_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

std::size_t AttentionShape::prob_count() const {
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.length * b.length * heads;
  return total;
}

void gemm_serial(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c) {
  check_gemm(s, a.size(), b.size(), c.size());
  gemm_rows(s, a.data(), b.data(), c.data(), 0, s.m);
}

void gemm_parallel(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c) {
  check_gemm(s, a.size(), b.size(), c.size());
#ifdef IBT_HAVE_OPENMP
  const auto m = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static) if (s.m * s.n * s.k > 32768)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    gemm_rows(s, a.data(), b.data(), c.data(), static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1);
  }
#else
  gemm_rows(s, a.data(), b.data(), c.data(), 0, s.m);
#endif
}

void gemm(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c) {
  if (g_parallel) {
    gemm_parallel(s, a, b, c);
  } else {
    gemm_serial(s, a, b, c);
  }
}

void attention_forward_serial(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out, std::span<Real> probs) {
  check_attention(s);
  const auto offsets = prob_offsets(s);
  if (probs.size() < offsets.back()) throw std::invalid_argument("attention: probs buffer too small");
  for (std::size_t b = 0; b < s.blocks.size(); ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      attention_forward_task(s, s.blocks[b], h, offsets[b], q.data(), k.data(), v.data(), out.data(), probs.data());
}

void attention_forward_parallel(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                                std::span<const Real> v, std::span<Real> out, std::span<Real> probs) {
  check_attention(s);
  const auto offsets = prob_offsets(s);
  if (probs.size() < offsets.back()) throw std::invalid_argument("attention: probs buffer too small");
  const auto tasks = static_cast<std::ptrdiff_t>(s.blocks.size() * s.heads);
#ifdef IBT_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const auto b = static_cast<std::size_t>(t) / s.heads;
    const auto h = static_cast<std::size_t>(t) % s.heads;
    attention_forward_task(s, s.blocks[b], h, offsets[b], q.data(), k.data(), v.data(), out.data(), probs.data());
  }
}

void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> out, std::span<Real> probs) {
  if (g_parallel) {
    attention_forward_parallel(s, q, k, v, out, probs);
  } else {
    attention_forward_serial(s, q, k, v, out, probs);
  }
}

void attention_backward_serial(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                               std::span<Real> dq, std::span<Real> dk, std::span<Real> dv) {
  check_attention(s);
  const auto offsets = prob_offsets(s);
  std::vector<Real> scratch;
  for (std::size_t b = 0; b < s.blocks.size(); ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      attention_backward_task(s, s.blocks[b], h, offsets[b], q.data(), k.data(), v.data(), probs.data(),
                              dout.data(), dq.data(), dk.data(), dv.data(), scratch);
}

void attention_backward_parallel(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                                 std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                                 std::span<Real> dq, std::span<Real> dk, std::span<Real> dv) {
  check_attention(s);
  const auto offsets = prob_offsets(s);
  const auto tasks = static_cast<std::ptrdiff_t>(s.blocks.size() * s.heads);
#ifdef IBT_HAVE_OPENMP
#pragma omp parallel
#endif
  {
    std::vector<Real> scratch;
#ifdef IBT_HAVE_OPENMP
#pragma omp for schedule(static)
#endif
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
      const auto b = static_cast<std::size_t>(t) / s.heads;
      const auto h = static_cast<std::size_t>(t) % s.heads;
      attention_backward_task(s, s.blocks[b], h, offsets[b], q.data(), k.data(), v.data(), probs.data(),
                              dout.data(), dq.data(), dk.data(), dv.data(), scratch);
    }
  }
}

void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                        std::span<Real> dq, std::span<Real> dk, std::span<Real> dv) {
  if (g_parallel) {
    attention_backward_parallel(s, q, k, v, probs, dout, dq, dk, dv);
  } else {
    attention_backward_serial(s, q, k, v, probs, dout, dq, dk, dv);
  }
}

}  // namespace ibt::kernels
