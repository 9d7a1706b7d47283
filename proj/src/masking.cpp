#include "ibt/masking.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "ibt/ops.hpp"

namespace ibt::masking {

MaskingConfig MaskingConfig::single_unit() {
  MaskingConfig c;
  c.text_anchor_prob = 0.15;
  c.min_extension = 0;
  c.max_extension = 0;
  c.image_anchor_prob = 0.15;
  c.link_by_iou = false;
  return c;
}

void MaskingConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("masking: ") + name + " must be in [0,1]");
  };
  prob(text_anchor_prob, "text_anchor_prob");
  prob(image_anchor_prob, "image_anchor_prob");
  prob(mask_token_prob, "mask_token_prob");
  prob(random_token_prob, "random_token_prob");
  prob(mask_token_prob + random_token_prob, "mask_token_prob + random_token_prob");
  prob(iou_threshold, "iou_threshold");
  if (min_extension < 0 || max_extension < min_extension) throw std::invalid_argument("masking: bad extension range");
}

double iou(const data::BBox& a, const data::BBox& b) {
  if (!(a.x2 > a.x1 && a.y2 > a.y1) || !(b.x2 > b.x1 && b.y2 > b.y1)) {
    throw std::invalid_argument("iou: degenerate box");
  }
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

MaskPlan sample_msm_plan(std::span<const int> tokens, const data::Vocabulary& vocab, const MaskingConfig& config,
                         Rng& rng) {
  MaskPlan plan;
  std::vector<std::uint8_t> masked(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (vocab.is_special(tokens[i])) continue;
    if (!bernoulli(rng, config.text_anchor_prob)) continue;
    plan.text_anchors.push_back(i);
    const int extension = uniform_int(rng, config.min_extension, config.max_extension);
    masked[i] = 1;
    std::size_t j = i + 1;
    for (int e = 0; e < extension && j < tokens.size() && !vocab.is_special(tokens[j]); ++e, ++j) masked[j] = 1;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!masked[i]) continue;
    const double u = uniform_real(rng);
    TokenAction action = TokenAction::kKeep;
    if (u < config.mask_token_prob) {
      action = TokenAction::kMaskToken;
    } else if (u < config.mask_token_prob + config.random_token_prob) {
      action = TokenAction::kRandomToken;
    }
    plan.text.push_back({i, action});
  }
  return plan;
}

std::vector<std::size_t> linked_objects(std::span<const data::BBox> boxes, std::span<const std::size_t> anchors,
                                        double iou_threshold, bool link_by_iou) {
  std::vector<std::uint8_t> masked(boxes.size(), 0);
  for (auto a : anchors) {
    if (a >= boxes.size()) throw std::out_of_range("anchor index outside boxes");
    masked[a] = 1;
    if (!link_by_iou) continue;
    for (std::size_t j = 0; j < boxes.size(); ++j)
      if (iou(boxes[j], boxes[a]) > iou_threshold) masked[j] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < boxes.size(); ++j)
    if (masked[j]) out.push_back(j);
  return out;
}

MaskPlan sample_mrm_plan(std::span<const data::BBox> boxes, const MaskingConfig& config, Rng& rng) {
  MaskPlan plan;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (bernoulli(rng, config.image_anchor_prob)) plan.object_anchors.push_back(i);
  plan.objects = linked_objects(boxes, plan.object_anchors, config.iou_threshold, config.link_by_iou);
  return plan;
}

MaskPlan sample_plan(const data::Sample& sample, const data::Vocabulary& vocab, const MaskingConfig& config,
                     Rng& rng) {
  MaskPlan plan = sample_msm_plan(sample.tokens, vocab, config, rng);
  MaskPlan image = sample_mrm_plan(sample.boxes, config, rng);
  plan.objects = std::move(image.objects);
  plan.object_anchors = std::move(image.object_anchors);
  return plan;
}

data::Sample apply_masks(const data::Sample& sample, const MaskPlan& plan, const data::Vocabulary& vocab, Rng& rng) {
  data::Sample out = sample;
  out.msm_targets.assign(sample.tokens.size(), kIgnoreTarget);
  out.mrm_targets.assign(sample.object_count(), kIgnoreTarget);
  std::vector<int> content;
  for (const auto& m : plan.text) {
    if (m.position >= sample.tokens.size()) throw std::out_of_range("mask plan position outside tokens");
    const int original = sample.tokens[m.position];
    out.msm_targets[m.position] = original;
    switch (m.action) {
      case TokenAction::kMaskToken:
        out.tokens[m.position] = vocab.mask_id;
        break;
      case TokenAction::kRandomToken:
        if (content.empty()) content = vocab.content_ids();
        out.tokens[m.position] = content[uniform_int<std::size_t>(rng, 0, content.size() - 1)];
        break;
      case TokenAction::kKeep:
        break;
    }
  }
  const std::size_t m = sample.object_count();
  const std::size_t dim = m ? sample.features.size() / m : 0;
  for (auto k : plan.objects) {
    if (k >= m) throw std::out_of_range("mask plan object outside sample");
    out.mrm_targets[k] = sample.labels.at(k);
    std::fill_n(out.features.begin() + static_cast<std::ptrdiff_t>(k * dim), dim, Real{0});
  }
  return out;
}

}  // namespace ibt::masking
