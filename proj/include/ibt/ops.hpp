#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ibt/kernels.hpp"
#include "ibt/tensor.hpp"

namespace ibt {

/// Target value excluded from cross-entropy averaging.
inline constexpr int kIgnoreTarget = -1;

// All matrix ops take rank-2 tensors in row-major layout.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
/// x + bias broadcast over rows; bias holds cols(x) values in any shape.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
/// Same values under a new shape of equal size.
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);

/// Numerically stable softmax along `axis` (0 or 1) of a rank-2 tensor.
Tensor softmax(const Tensor& x, int axis = 1);
/// Row-wise layer normalization; eps sits inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps);
/// Exact GeLU, x * Phi(x).
Tensor gelu(const Tensor& x);

/// Gathers table rows; the gradient scatters back to the looked-up rows.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Mean negative log-likelihood over rows whose target is not `ignore`.
/// Returns 0 when every row is ignored.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, int ignore = kIgnoreTarget);
/// Mean binary cross-entropy of sigmoid(logits) against labels in {0, 1}.
Tensor bce_with_logits(const Tensor& logits, std::span<const Real> labels);

/// Multi-head scaled dot-product attention over row blocks of (rows x hidden)
/// query/key/value matrices. Rows attend only within their block and only to
/// rows whose `key_valid` flag is set.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const kernels::AttentionBlock> blocks, std::span<const std::uint8_t> key_valid);

}  // namespace ibt
