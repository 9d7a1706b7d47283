#pragma once

// Data-parallel inner loops. Each kernel has a serial reference and an
// OpenMP version that partitions the same per-element work across threads;
// the two produce bit-identical results because every output element is
// reduced in the same order by exactly one thread.

#include <cstddef>
#include <cstdint>
#include <span>

#include "ibt/tensor.hpp"

namespace ibt::kernels {

/// Selects the OpenMP path for the dispatching entry points. Defaults to on
/// when built with OpenMP.
void set_parallel(bool enabled);
[[nodiscard]] bool parallel_enabled();
void set_num_threads(int threads);
[[nodiscard]] int max_threads();
[[nodiscard]] bool openmp_available();

struct GemmShape {
  std::size_t m = 0;  // rows of op(a) and c
  std::size_t n = 0;  // cols of op(b) and c
  std::size_t k = 0;  // shared dimension
  bool trans_a = false;
  bool trans_b = false;
  bool accumulate = false;  // c += product instead of c = product
};

// c = op(a) * op(b), row-major.
void gemm_serial(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c);
void gemm_parallel(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c);
void gemm(const GemmShape& s, std::span<const Real> a, std::span<const Real> b, std::span<Real> c);

/// Contiguous run of rows that attend to each other.
struct AttentionBlock {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct AttentionShape {
  std::size_t rows = 0;
  std::size_t hidden = 0;
  std::size_t heads = 1;
  std::span<const AttentionBlock> blocks;
  std::span<const std::uint8_t> key_valid;  // one flag per row; 0 = padding

  [[nodiscard]] std::size_t head_dim() const { return hidden / heads; }
  /// Number of stored probabilities (sum of length^2 times heads).
  [[nodiscard]] std::size_t prob_count() const;
};

// Scaled dot-product multi-head attention. Invalid keys get a -inf logit.
// `probs` receives the softmax weights, needed by the backward pass.
void attention_forward_serial(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out, std::span<Real> probs);
void attention_forward_parallel(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                                std::span<const Real> v, std::span<Real> out, std::span<Real> probs);
void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> out, std::span<Real> probs);

// Accumulates into dq, dk, dv.
void attention_backward_serial(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                               std::span<Real> dq, std::span<Real> dk, std::span<Real> dv);
void attention_backward_parallel(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                                 std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                                 std::span<Real> dq, std::span<Real> dk, std::span<Real> dv);
void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs, std::span<const Real> dout,
                        std::span<Real> dq, std::span<Real> dk, std::span<Real> dv);

}  // namespace ibt::kernels
