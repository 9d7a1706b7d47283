#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ibt/data.hpp"
#include "ibt/random.hpp"

namespace ibt::masking {

enum class TokenAction : std::uint8_t { kMaskToken, kRandomToken, kKeep };

struct MaskingConfig {
  double text_anchor_prob = 0.1;
  int min_extension = 0;  // extra tokens after an anchor, drawn uniformly
  int max_extension = 2;
  double mask_token_prob = 0.8;
  double random_token_prob = 0.1;  // keep gets the remainder
  double image_anchor_prob = 0.1;
  double iou_threshold = 0.4;  // strict: linked when iou > threshold
  bool link_by_iou = true;

  /// Masked group modeling: segments for text, IoU-linked regions for images.
  static MaskingConfig group() { return {}; }
  /// BERT-style baseline: isolated tokens and regions at 15%.
  static MaskingConfig single_unit();

  /// Throws std::invalid_argument on probabilities outside [0,1] or a bad
  /// extension range.
  void validate() const;
  bool operator==(const MaskingConfig&) const = default;
};

struct TextMask {
  std::size_t position = 0;
  TokenAction action = TokenAction::kMaskToken;
};

struct MaskPlan {
  std::vector<TextMask> text;           // ascending positions
  std::vector<std::size_t> text_anchors;
  std::vector<std::size_t> objects;     // ascending object indices, o_[CLS] excluded
  std::vector<std::size_t> object_anchors;

  [[nodiscard]] bool empty() const { return text.empty() && objects.empty(); }
};

/// Intersection over union. Throws std::invalid_argument on a degenerate box.
double iou(const data::BBox& a, const data::BBox& b);

/// Text half of a plan. Anchors are drawn over non-special tokens; each anchor
/// extends over the next L non-special tokens, stopping at a special token.
/// Overlapping segments merge.
MaskPlan sample_msm_plan(std::span<const int> tokens, const data::Vocabulary& vocab, const MaskingConfig& config,
                         Rng& rng);

/// Image half of a plan: anchors plus every object whose IoU with some
/// anchor exceeds the threshold (one step, not transitive).
MaskPlan sample_mrm_plan(std::span<const data::BBox> boxes, const MaskingConfig& config, Rng& rng);

/// Deterministic part of sample_mrm_plan for fixed anchors.
std::vector<std::size_t> linked_objects(std::span<const data::BBox> boxes, std::span<const std::size_t> anchors,
                                        double iou_threshold, bool link_by_iou = true);

/// Both halves, text first then image, from one generator.
MaskPlan sample_plan(const data::Sample& sample, const data::Vocabulary& vocab, const MaskingConfig& config,
                     Rng& rng);

/// Rewrites masked tokens, zeroes masked feature rows and records targets.
/// Random replacement tokens are drawn uniformly from the non-special ids.
data::Sample apply_masks(const data::Sample& sample, const MaskPlan& plan, const data::Vocabulary& vocab, Rng& rng);

}  // namespace ibt::masking
