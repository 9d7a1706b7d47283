#include "ibt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ibt {

namespace {

using detail::Node;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected rank 2, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

Real normal_cdf(Real x) { return Real{0.5} * std::erfc(-x / std::numbers::sqrt2_v<Real>); }

Real normal_pdf(Real x) { return std::exp(Real{-0.5} * x * x) / std::sqrt(2 * std::numbers::pi_v<Real>); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<Real> out(m * n);
  kernels::gemm({m, n, k, false, false, false}, a.values(), b.values(), out);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kernels::gemm({m, k, n, false, true, true}, self.grad, pb.values, pa.ensure_grad());
    if (pb.requires_grad) kernels::gemm({k, n, m, true, false, true}, pa.values, self.grad, pb.ensure_grad());
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<Real> out(r * c);
  const auto v = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {x}, [r, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c) {
    throw std::invalid_argument("add_bias: bias of " + std::to_string(bias.size()) + " values for " +
                                std::to_string(c) + " columns");
  }
  std::vector<Real> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<Real> out(x.values().begin(), x.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.values()) total += v;
  return Tensor::make_result({}, {total}, {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor softmax(const Tensor& x, int axis) {
  require_rank2(x, "softmax");
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1 && axis != -1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<Real> out(r * c);
  const auto v = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = v.data() + i * c;
    Real* y = out.data() + i * c;
    const Real mx = *std::max_element(row, row + c);
    Real denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(row[j] - mx);
      denom += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= denom;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [r, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const Real* y = self.values.data() + i * c;
      const Real* gy = self.grad.data() + i * c;
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_rank2(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (c < 2) throw std::invalid_argument("layer_norm: last axis must have at least 2 entries");
  if (gain.size() != c || bias.size() != c) throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  const auto v = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<Real>>(r * c);
  auto inv_std = std::make_shared<std::vector<Real>>(r);
  std::vector<Real> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = v.data() + i * c;
    Real mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(c);
    const Real inv = Real{1} / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const Real xh = (row[j] - mean) * inv;
      (*xhat)[i * c + j] = xh;
      out[i * c + j] = xh * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gain, bias}, [r, c, xhat, inv_std](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    if (pg.requires_grad) {
      auto& g = pg.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * (*xhat)[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      const Real n = static_cast<Real>(c);
      for (std::size_t i = 0; i < r; ++i) {
        Real mean_d = 0, mean_dx = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const Real d = self.grad[i * c + j] * pg.values[j];
          mean_d += d;
          mean_dx += d * (*xhat)[i * c + j];
        }
        mean_d /= n;
        mean_dx /= n;
        for (std::size_t j = 0; j < c; ++j) {
          const Real d = self.grad[i * c + j] * pg.values[j];
          g[i * c + j] += (*inv_std)[i] * (d - mean_d - (*xhat)[i * c + j] * mean_dx);
        }
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<Real> out(x.size());
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * normal_cdf(v[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real xi = px.values[i];
      g[i] += self.grad[i] * (normal_cdf(xi) + xi * normal_pdf(xi));
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  const std::size_t c = x.cols(), nrows = x.rows();
  std::vector<Real> out(rows.size() * c);
  const auto v = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= nrows) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " + std::to_string(nrows));
    }
    std::copy_n(v.data() + rows[i] * c, c, out.data() + i * c);
  }
  auto index = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return Tensor::make_result({rows.size(), c}, std::move(out), {x}, [index, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index->size(); ++i) {
      const std::size_t row = (*index)[i];
      for (std::size_t j = 0; j < c; ++j) g[row * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_lookup");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    total += p.rows();
  }
  std::vector<Real> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor::make_result({total, c}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p->values.size();
    }
  });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, int ignore) {
  require_rank2(logits, "cross_entropy_logits");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw std::invalid_argument("cross_entropy_logits: one target per row required");
  const auto v = logits.values();
  auto probs = std::make_shared<std::vector<Real>>(r * c, Real{0});
  std::size_t counted = 0;
  Real total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const int t = targets[i];
    if (t == ignore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw std::out_of_range("cross_entropy_logits: target " + std::to_string(t) + " outside " +
                              std::to_string(c) + " classes");
    }
    const Real* row = v.data() + i * c;
    const Real mx = *std::max_element(row, row + c);
    Real denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const Real log_z = mx + std::log(denom);
    total += log_z - row[t];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - log_z);
    ++counted;
  }
  const Real loss = counted ? total / static_cast<Real>(counted) : Real{0};
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  return Tensor::make_result({}, {loss}, {logits}, [probs, tgt, r, c, counted, ignore](Node& self) {
    if (counted == 0) return;
    auto& g = self.parents[0]->ensure_grad();
    const Real w = self.grad[0] / static_cast<Real>(counted);
    for (std::size_t i = 0; i < r; ++i) {
      const int t = (*tgt)[i];
      if (t == ignore) continue;
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += w * (*probs)[i * c + j];
      g[i * c + static_cast<std::size_t>(t)] -= w;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const Real> labels) {
  if (logits.size() != labels.size()) throw std::invalid_argument("bce_with_logits: one label per logit required");
  if (labels.empty()) throw std::invalid_argument("bce_with_logits: empty batch");
  const auto v = logits.values();
  Real total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Real x = v[i], y = labels[i];
    total += std::max(x, Real{0}) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  const Real n = static_cast<Real>(v.size());
  auto lab = std::make_shared<std::vector<Real>>(labels.begin(), labels.end());
  return Tensor::make_result({}, {total / n}, {logits}, [lab, n](Node& self) {
    Node& px = *self.parents[0];
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real sig = Real{1} / (Real{1} + std::exp(-px.values[i]));
      g[i] += self.grad[0] * (sig - (*lab)[i]) / n;
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const kernels::AttentionBlock> blocks, std::span<const std::uint8_t> key_valid) {
  require_rank2(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  auto blk = std::make_shared<std::vector<kernels::AttentionBlock>>(blocks.begin(), blocks.end());
  auto mask = std::make_shared<std::vector<std::uint8_t>>(key_valid.begin(), key_valid.end());
  kernels::AttentionShape shape{q.rows(), q.cols(), heads, *blk, *mask};
  auto probs = std::make_shared<std::vector<Real>>(shape.prob_count());
  std::vector<Real> out(q.size(), Real{0});
  kernels::attention_forward(shape, q.values(), k.values(), v.values(), out, *probs);
  return Tensor::make_result(q.shape(), std::move(out), {q, k, v}, [shape, blk, mask, probs](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    // The kernel writes all three gradients; unused ones land in scratch.
    std::vector<Real> sq, sk, sv;
    auto target = [](Node& p, std::vector<Real>& scratch) -> std::span<Real> {
      if (p.requires_grad) return p.ensure_grad();
      scratch.assign(p.values.size(), Real{0});
      return scratch;
    };
    kernels::attention_backward(shape, pq.values, pk.values, pv.values, *probs, self.grad, target(pq, sq),
                                target(pk, sk), target(pv, sv));
  });
}

}  // namespace ibt
