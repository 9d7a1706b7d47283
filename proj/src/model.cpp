#include "ibt/model.hpp"

#include <stdexcept>

#include "ibt/ops.hpp"
#include "ibt/random.hpp"

namespace ibt::model {

std::string variant_name(Variant v) { return v == Variant::kInterBert ? "interbert" : "single_stream"; }

Variant parse_variant(const std::string& name) {
  if (name == "interbert") return Variant::kInterBert;
  if (name == "single_stream") return Variant::kSingleStream;
  throw std::invalid_argument("unknown architecture variant '" + name + "'");
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.hidden_size = 768;
  c.num_heads = 12;
  c.ffn_size = 3072;
  c.num_interaction_layers = 12;
  c.num_extraction_layers = 6;
  c.vocab_size = 30522;
  c.object_feature_dim = 2048;
  c.max_text_len = 512;
  c.max_objects = 100;
  c.num_object_classes = 33;
  c.init_std = 0.02;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (hidden_size == 0 || num_heads == 0) fail("hidden_size and num_heads must be positive");
  if (hidden_size % num_heads != 0) fail("hidden_size must be divisible by num_heads");
  if (hidden_size < 2) fail("hidden_size must be at least 2 for layer norm");
  if (ffn_size == 0) fail("ffn_size must be positive");
  if (num_interaction_layers < 1) fail("num_interaction_layers must be at least 1");
  if (variant == Variant::kInterBert && num_extraction_layers < 1) {
    fail("num_extraction_layers must be at least 1 for the interbert variant");
  }
  if (vocab_size == 0 || object_feature_dim == 0 || num_object_classes == 0) fail("sizes must be positive");
  if (max_text_len < 3) fail("max_text_len must leave room for [CLS], a token and [SEP]");
  if (max_objects < 1) fail("max_objects must be at least 1");
  if (!(ln_eps > 0)) fail("ln_eps must be positive");
  if (!(init_std >= 0)) fail("init_std must be non-negative");
}

namespace {

struct Spec {
  std::string name;
  Shape shape;
  enum Kind { kWeight, kZero, kOne } kind;
};

void layer_specs(std::vector<Spec>& out, const std::string& prefix, const ModelConfig& c) {
  const auto H = c.hidden_size, F = c.ffn_size;
  for (const char* proj : {"q", "k", "v", "o"}) {
    out.push_back({prefix + "attention.w" + proj, {H, H}, Spec::kWeight});
    out.push_back({prefix + "attention.b" + proj, {H}, Spec::kZero});
  }
  out.push_back({prefix + "ln1.gain", {H}, Spec::kOne});
  out.push_back({prefix + "ln1.bias", {H}, Spec::kZero});
  out.push_back({prefix + "ffn.w1", {H, F}, Spec::kWeight});
  out.push_back({prefix + "ffn.b1", {F}, Spec::kZero});
  out.push_back({prefix + "ffn.w2", {F, H}, Spec::kWeight});
  out.push_back({prefix + "ffn.b2", {H}, Spec::kZero});
  out.push_back({prefix + "ln2.gain", {H}, Spec::kOne});
  out.push_back({prefix + "ln2.bias", {H}, Spec::kZero});
}

std::vector<Spec> parameter_specs(const ModelConfig& c) {
  const auto H = c.hidden_size;
  std::vector<Spec> s;
  s.push_back({"embeddings.text.token", {c.vocab_size, H}, Spec::kWeight});
  s.push_back({"embeddings.text.position", {c.max_text_len, H}, Spec::kWeight});
  s.push_back({"embeddings.segment", {2, H}, Spec::kWeight});
  s.push_back({"embeddings.text.ln.gain", {H}, Spec::kOne});
  s.push_back({"embeddings.text.ln.bias", {H}, Spec::kZero});
  s.push_back({"embeddings.image.feature.w", {c.object_feature_dim, H}, Spec::kWeight});
  s.push_back({"embeddings.image.feature.b", {H}, Spec::kZero});
  s.push_back({"embeddings.image.geometry.w", {data::kGeometryDim, H}, Spec::kWeight});
  s.push_back({"embeddings.image.geometry.b", {H}, Spec::kZero});
  s.push_back({"embeddings.image.ln.gain", {H}, Spec::kOne});
  s.push_back({"embeddings.image.ln.bias", {H}, Spec::kZero});
  for (std::size_t l = 0; l < c.num_interaction_layers; ++l) {
    layer_specs(s, "interaction.layer" + std::to_string(l) + ".", c);
  }
  if (c.variant == Variant::kInterBert) {
    for (const char* stream : {"image", "text"})
      for (std::size_t l = 0; l < c.num_extraction_layers; ++l) {
        layer_specs(s, std::string("extraction.") + stream + ".layer" + std::to_string(l) + ".", c);
      }
  }
  s.push_back({"heads.itm.w1", {H, H}, Spec::kWeight});
  s.push_back({"heads.itm.b1", {H}, Spec::kZero});
  s.push_back({"heads.itm.w2", {H, 1}, Spec::kWeight});
  s.push_back({"heads.itm.b2", {1}, Spec::kZero});
  if (!c.tie_msm_weights) s.push_back({"heads.msm.w", {H, c.vocab_size}, Spec::kWeight});
  s.push_back({"heads.msm.b", {c.vocab_size}, Spec::kZero});
  s.push_back({"heads.mrm.w", {H, c.num_object_classes}, Spec::kWeight});
  s.push_back({"heads.mrm.b", {c.num_object_classes}, Spec::kZero});
  return s;
}

}  // namespace

std::size_t count_parameters(const ModelConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const auto& s : parameter_specs(config)) n += shape_size(s.shape);
  return n;
}

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, static_cast<double>(config.init_std));
  ParameterSet params;
  for (const auto& s : parameter_specs(config)) {
    std::vector<Real> values(shape_size(s.shape));
    switch (s.kind) {
      case Spec::kWeight:
        for (auto& v : values) v = config.init_std > 0 ? static_cast<Real>(normal(rng)) : Real{0};
        break;
      case Spec::kZero:
        break;
      case Spec::kOne:
        std::fill(values.begin(), values.end(), Real{1});
        break;
    }
    params.add(s.name, Tensor::parameter(s.shape, std::move(values)));
  }
  return params;
}

InterBert::InterBert(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  for (const auto& s : parameter_specs(config_)) {
    if (!params_.contains(s.name)) throw std::invalid_argument("missing parameter " + s.name);
    if (params_.get(s.name).shape() != s.shape) {
      throw std::invalid_argument("parameter " + s.name + " has shape " + shape_str(params_.get(s.name).shape()) +
                                  ", expected " + shape_str(s.shape));
    }
  }
}

InterBert InterBert::initialize(const ModelConfig& config, std::uint64_t seed) {
  return InterBert(config, init_parameters(config, seed));
}

namespace {

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

std::vector<kernels::AttentionBlock> uniform_blocks(std::size_t count, std::size_t length) {
  std::vector<kernels::AttentionBlock> blocks(count);
  for (std::size_t i = 0; i < count; ++i) blocks[i] = {i * length, length};
  return blocks;
}

}  // namespace

Tensor InterBert::embed_text(const data::Batch& batch) const {
  const auto& L = batch.layout;
  if (L.text_len > config_.max_text_len) {
    throw std::invalid_argument("text length " + std::to_string(L.text_len) + " exceeds max_text_len " +
                                std::to_string(config_.max_text_len));
  }
  const std::size_t rows = L.batch * L.text_len;
  std::vector<int> positions(rows), segments(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = static_cast<int>(r % L.text_len);
  auto x = add(embedding_lookup(p("embeddings.text.token"), batch.token_ids),
               embedding_lookup(p("embeddings.text.position"), positions));
  x = add(x, embedding_lookup(p("embeddings.segment"), segments));
  return layer_norm(x, p("embeddings.text.ln.gain"), p("embeddings.text.ln.bias"), config_.ln_eps);
}

Tensor InterBert::embed_image(const data::Batch& batch) const {
  const auto& L = batch.layout;
  const std::size_t M = L.max_objects(), F = batch.feature_dim;
  if (F != config_.object_feature_dim) {
    throw std::invalid_argument("feature dim " + std::to_string(F) + " differs from config " +
                                std::to_string(config_.object_feature_dim));
  }
  if (M > config_.max_objects) {
    throw std::invalid_argument(std::to_string(M) + " objects exceed max_objects " + std::to_string(config_.max_objects));
  }
  const std::size_t rows = L.batch * L.image_len;
  std::vector<Real> features(rows * F, Real{0});
  for (std::size_t b = 0; b < L.batch; ++b) {
    const std::size_t m = batch.object_counts[b];
    if (m == 0) throw std::invalid_argument("sample without objects");
    const Real* src = batch.object_features.data() + b * M * F;
    Real* dst = features.data() + b * L.image_len * F;
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t d = 0; d < F; ++d) {
        dst[d] += src[k * F + d];
        dst[(k + 1) * F + d] = src[k * F + d];
      }
    for (std::size_t d = 0; d < F; ++d) dst[d] /= static_cast<Real>(m);
  }
  auto feat = Tensor::constant({rows, F}, std::move(features));
  auto geo = Tensor::constant({rows, data::kGeometryDim}, batch.geometry);
  std::vector<int> segments(rows, 0);
  auto x = add(affine(feat, p("embeddings.image.feature.w"), p("embeddings.image.feature.b")),
               affine(geo, p("embeddings.image.geometry.w"), p("embeddings.image.geometry.b")));
  x = add(x, embedding_lookup(p("embeddings.segment"), segments));
  return layer_norm(x, p("embeddings.image.ln.gain"), p("embeddings.image.ln.bias"), config_.ln_eps);
}

Tensor InterBert::fuse(const Tensor& image, const Tensor& text, const data::SequenceLayout& L) const {
  const std::size_t image_rows = L.batch * L.image_len;
  std::vector<std::size_t> order;
  order.reserve(L.batch * L.length());
  for (std::size_t b = 0; b < L.batch; ++b) {
    for (std::size_t r = 0; r < L.image_len; ++r) order.push_back(b * L.image_len + r);
    for (std::size_t r = 0; r < L.text_len; ++r) order.push_back(image_rows + b * L.text_len + r);
  }
  return gather_rows(concat_rows({image, text}), order);
}

Tensor InterBert::layer(const Tensor& x, const std::string& prefix, std::span<const kernels::AttentionBlock> blocks,
                        std::span<const std::uint8_t> valid) const {
  auto q = affine(x, p(prefix + "attention.wq"), p(prefix + "attention.bq"));
  auto k = affine(x, p(prefix + "attention.wk"), p(prefix + "attention.bk"));
  auto v = affine(x, p(prefix + "attention.wv"), p(prefix + "attention.bv"));
  auto ctx = attention(q, k, v, config_.num_heads, blocks, valid);
  auto attended = affine(ctx, p(prefix + "attention.wo"), p(prefix + "attention.bo"));
  auto h = layer_norm(add(x, attended), p(prefix + "ln1.gain"), p(prefix + "ln1.bias"), config_.ln_eps);
  auto f = affine(gelu(affine(h, p(prefix + "ffn.w1"), p(prefix + "ffn.b1"))), p(prefix + "ffn.w2"), p(prefix + "ffn.b2"));
  return layer_norm(add(h, f), p(prefix + "ln2.gain"), p(prefix + "ln2.bias"), config_.ln_eps);
}

Tensor InterBert::interaction_forward(const Tensor& fused, const data::SequenceLayout& L) const {
  if (fused.rows() != L.batch * L.length()) throw std::invalid_argument("interaction_forward: row count mismatch");
  const auto blocks = uniform_blocks(L.batch, L.length());
  const auto valid = L.fused_valid();
  Tensor x = fused;
  for (std::size_t l = 0; l < config_.num_interaction_layers; ++l) {
    x = layer(x, "interaction.layer" + std::to_string(l) + ".", blocks, valid);
  }
  return x;
}

namespace {

struct Spans {
  std::vector<std::size_t> image, text, image_cls, text_cls;
};

Spans spans_of(const data::SequenceLayout& L) {
  Spans s;
  for (std::size_t b = 0; b < L.batch; ++b) {
    const std::size_t base = b * L.length();
    s.image_cls.push_back(base);
    s.text_cls.push_back(base + L.text_begin());
    for (std::size_t r = 0; r < L.image_len; ++r) s.image.push_back(base + r);
    for (std::size_t r = 0; r < L.text_len; ++r) s.text.push_back(base + L.text_begin() + r);
  }
  return s;
}

std::vector<std::size_t> strided(std::size_t count, std::size_t stride) {
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = i * stride;
  return rows;
}

}  // namespace

ModelOutputs InterBert::extraction_forward(const Tensor& fused, const data::SequenceLayout& L) const {
  if (config_.variant != Variant::kInterBert) throw std::logic_error("extraction_forward needs the interbert variant");
  const auto spans = spans_of(L);
  ModelOutputs out;
  out.fused = fused;
  Tensor image = gather_rows(fused, spans.image);
  Tensor text = gather_rows(fused, spans.text);
  const auto image_blocks = uniform_blocks(L.batch, L.image_len);
  const auto text_blocks = uniform_blocks(L.batch, L.text_len);
  for (std::size_t l = 0; l < config_.num_extraction_layers; ++l) {
    image = layer(image, "extraction.image.layer" + std::to_string(l) + ".", image_blocks, L.image_valid);
    text = layer(text, "extraction.text.layer" + std::to_string(l) + ".", text_blocks, L.text_valid);
  }
  out.h_image = image;
  out.h_text = text;
  out.pooled_image = gather_rows(image, strided(L.batch, L.image_len));
  out.pooled_text = gather_rows(text, strided(L.batch, L.text_len));
  return out;
}

ModelOutputs InterBert::forward(const data::Batch& batch) const {
  const auto& L = batch.layout;
  auto fused = interaction_forward(fuse(embed_image(batch), embed_text(batch), L), L);
  if (config_.variant == Variant::kInterBert) return extraction_forward(fused, L);
  const auto spans = spans_of(L);
  ModelOutputs out;
  out.fused = fused;
  out.h_image = gather_rows(fused, spans.image);
  out.h_text = gather_rows(fused, spans.text);
  out.pooled_image = gather_rows(fused, spans.image_cls);
  out.pooled_text = gather_rows(fused, spans.text_cls);
  return out;
}

Tensor InterBert::itm_logits(const Tensor& pooled_image, const Tensor& pooled_text) const {
  auto hidden = gelu(affine(mul(pooled_image, pooled_text), p("heads.itm.w1"), p("heads.itm.b1")));
  return affine(hidden, p("heads.itm.w2"), p("heads.itm.b2"));
}

Tensor InterBert::msm_logits(const Tensor& h_text) const {
  const Tensor w = config_.tie_msm_weights ? transpose(p("embeddings.text.token")) : p("heads.msm.w");
  return affine(h_text, w, p("heads.msm.b"));
}

Tensor InterBert::mrm_logits(const Tensor& h_objects) const {
  return affine(h_objects, p("heads.mrm.w"), p("heads.mrm.b"));
}

Tensor InterBert::object_rows(const Tensor& h_image, const data::SequenceLayout& L) const {
  std::vector<std::size_t> rows;
  rows.reserve(L.batch * L.max_objects());
  for (std::size_t b = 0; b < L.batch; ++b)
    for (std::size_t k = 1; k < L.image_len; ++k) rows.push_back(b * L.image_len + k);
  return gather_rows(h_image, rows);
}

}  // namespace ibt::model
