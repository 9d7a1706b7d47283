#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ibt/data.hpp"
#include "ibt/kernels.hpp"
#include "ibt/parameters.hpp"
#include "ibt/tensor.hpp"

namespace ibt::model {

enum class Variant { kInterBert, kSingleStream };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_size = 128;
  std::size_t num_interaction_layers = 2;
  std::size_t num_extraction_layers = 1;  // per stream
  std::size_t vocab_size = 28;
  std::size_t object_feature_dim = 24;
  std::size_t max_text_len = 16;  // counts [CLS] and [SEP]
  std::size_t max_objects = 8;
  Real ln_eps = 1e-12;
  Real init_std = 0.1;  // full() uses 0.02
  std::size_t num_object_classes = 16;
  Variant variant = Variant::kInterBert;
  bool tie_msm_weights = false;

  /// BERT-base sized network.
  static ModelConfig full();
  /// Desk-scale default.
  static ModelConfig toy() { return {}; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Number of scalars init_parameters would allocate, without allocating.
std::size_t count_parameters(const ModelConfig& config);

/// Weights ~ N(0, init_std^2) in registration order from one seeded stream;
/// biases 0, layer-norm gains 1.
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

struct ModelOutputs {
  Tensor fused;         // interaction output, batch x (image_len + text_len) rows
  Tensor h_image;       // batch x image_len rows, row 0 of each sample is o_[CLS]
  Tensor h_text;        // batch x text_len rows, row 0 of each sample is [CLS]
  Tensor pooled_image;  // batch x hidden
  Tensor pooled_text;   // batch x hidden
};

class InterBert {
 public:
  /// Checks that every expected parameter is present with the right shape.
  InterBert(ModelConfig config, ParameterSet params);
  static InterBert initialize(const ModelConfig& config, std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  /// Token + position + segment 1 embeddings, layer-normed; batch x text_len rows.
  [[nodiscard]] Tensor embed_text(const data::Batch& batch) const;
  /// Projected features + projected box geometry + segment 0, layer-normed;
  /// batch x image_len rows. Row 0 projects the mean of the object features.
  [[nodiscard]] Tensor embed_image(const data::Batch& batch) const;
  /// Interleaves per sample: image span then text span.
  [[nodiscard]] Tensor fuse(const Tensor& image, const Tensor& text, const data::SequenceLayout& layout) const;

  /// One transformer block: self-attention, residual + LN, GeLU FFN, residual + LN.
  [[nodiscard]] Tensor layer(const Tensor& x, const std::string& prefix, std::span<const kernels::AttentionBlock> blocks,
                             std::span<const std::uint8_t> valid) const;

  /// The single-stream stack over whole fused samples.
  [[nodiscard]] Tensor interaction_forward(const Tensor& fused, const data::SequenceLayout& layout) const;
  /// Separate image and text stacks on the split interaction output.
  [[nodiscard]] ModelOutputs extraction_forward(const Tensor& fused, const data::SequenceLayout& layout) const;

  [[nodiscard]] ModelOutputs forward(const data::Batch& batch) const;

  /// MLP(pooled_image * pooled_text); batch x 1 raw logits.
  [[nodiscard]] Tensor itm_logits(const Tensor& pooled_image, const Tensor& pooled_text) const;
  /// Vocabulary logits for every row of `h_text`.
  [[nodiscard]] Tensor msm_logits(const Tensor& h_text) const;
  /// Object-class logits for every row of `h_objects`.
  [[nodiscard]] Tensor mrm_logits(const Tensor& h_objects) const;
  /// Rows of h_image excluding each sample's o_[CLS]; batch x max_objects.
  [[nodiscard]] Tensor object_rows(const Tensor& h_image, const data::SequenceLayout& layout) const;

 private:
  [[nodiscard]] const Tensor& p(const std::string& name) const { return params_.get(name); }

  ModelConfig config_;
  ParameterSet params_;
};

}  // namespace ibt::model
