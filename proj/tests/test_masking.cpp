#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ibt/masking.hpp"
#include "ibt/ops.hpp"

using namespace ibt;
using namespace ibt::masking;
using data::BBox;

namespace {

data::Vocabulary vocab() { return data::synth_vocabulary(16); }

std::vector<int> content_sequence(std::size_t n) {
  auto v = vocab();
  std::vector<int> t{v.cls_id};
  for (std::size_t i = 0; i < n; ++i) t.push_back(4 + static_cast<int>(i % 16));
  t.push_back(v.sep_id);
  return t;
}

// P(position j of n content tokens is masked) when each earlier token within
// reach anchors independently and extends uniformly over {0..max_ext}.
double expected_masked_fraction(std::size_t n, double p, int max_ext) {
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double uncovered = 1;
    for (int d = 0; d <= max_ext && static_cast<std::size_t>(d) <= j; ++d) {
      const double reach = static_cast<double>(max_ext - d + 1) / (max_ext + 1);
      uncovered *= 1 - p * reach;
    }
    total += 1 - uncovered;
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("iou examples") {
  BBox a{0, 0, 2, 2}, b{1, 1, 3, 3}, far{10, 10, 12, 12};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, far) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  BBox touching{2, 0, 4, 2};
  CHECK(iou(a, touching) == 0.0);
  CHECK_THROWS_AS(iou(BBox{0, 0, 0, 1}, a), std::invalid_argument);
}

TEST_CASE("iou is symmetric") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    auto box = [&] {
      double x = uniform_real(rng, 0, 50), y = uniform_real(rng, 0, 50);
      return BBox{x, y, x + uniform_real(rng, 0.5, 30), y + uniform_real(rng, 0.5, 30)};
    };
    auto p = box(), q = box();
    CHECK(iou(p, q) == iou(q, p));
    CHECK(iou(p, p) == 1.0);
    CHECK(iou(p, q) >= 0.0);
    CHECK(iou(p, q) <= 1.0);
  }
}

TEST_CASE("msm boundary cases") {
  auto v = vocab();
  Rng rng(1);
  MaskingConfig off;
  off.text_anchor_prob = 0;
  CHECK(sample_msm_plan(content_sequence(10), v, off, rng).text.empty());

  MaskingConfig forced;
  forced.text_anchor_prob = 1;
  forced.min_extension = forced.max_extension = 2;
  auto one = content_sequence(1);
  auto plan = sample_msm_plan(one, v, forced, rng);
  REQUIRE(plan.text.size() == 1);
  CHECK(plan.text[0].position == 1);

  // Special tokens are never masked, even with every token an anchor.
  auto all = sample_msm_plan(content_sequence(7), v, forced, rng);
  CHECK(all.text.size() == 7);
  for (const auto& m : all.text) CHECK(!v.is_special(content_sequence(7)[m.position]));
}

TEST_CASE("msm masked fraction matches the analytic oracle") {
  auto v = vocab();
  auto tokens = content_sequence(20);
  MaskingConfig cfg;
  Rng rng(2024);
  const int samples = 100000;
  std::size_t masked = 0, anchors = 0;
  for (int s = 0; s < samples; ++s) {
    auto plan = sample_msm_plan(tokens, v, cfg, rng);
    masked += plan.text.size();
    anchors += plan.text_anchors.size();
  }
  const double fraction = static_cast<double>(masked) / (20.0 * samples);
  CHECK(std::abs(fraction - expected_masked_fraction(20, 0.1, 2)) < 0.003);
  CHECK(std::abs(static_cast<double>(anchors) / (20.0 * samples) - 0.1) < 0.005);
}

TEST_CASE("msm action mix") {
  auto v = vocab();
  auto tokens = content_sequence(20);
  MaskingConfig cfg;
  Rng rng(7);
  std::size_t counts[3] = {0, 0, 0}, total = 0;
  while (total < 100000) {
    for (const auto& m : sample_msm_plan(tokens, v, cfg, rng).text) {
      ++counts[static_cast<int>(m.action)];
      ++total;
    }
  }
  const double n = static_cast<double>(total);
  CHECK(std::abs(counts[0] / n - 0.8) < 0.01);
  CHECK(std::abs(counts[1] / n - 0.1) < 0.01);
  CHECK(std::abs(counts[2] / n - 0.1) < 0.01);
}

TEST_CASE("mrm linking") {
  MaskingConfig cfg;
  std::vector<BBox> disjoint{{0, 0, 1, 1}, {5, 5, 6, 6}, {10, 10, 11, 11}};
  std::vector<std::size_t> anchors{1};
  CHECK(linked_objects(disjoint, anchors, 0.4) == std::vector<std::size_t>{1});

  std::vector<BBox> twins{{0, 0, 4, 4}, {0, 0, 4, 4}, {20, 20, 30, 30}};
  std::vector<std::size_t> first{0};
  CHECK(linked_objects(twins, first, 0.4) == std::vector<std::size_t>{0, 1});

  // Box 1 overlaps the anchor at 81/119, box 4 at 60/100, box 2 at 50/150.
  // Box 3 overlaps box 1 at 64/136 but the anchor only at 49/151, so a
  // transitive closure would add it and the single-step rule must not.
  std::vector<BBox> five{{0, 0, 10, 10}, {1, 1, 11, 11}, {5, 0, 15, 10}, {3, 3, 13, 13}, {0, 0, 10, 6}};
  CHECK(linked_objects(five, first, 0.4) == std::vector<std::size_t>{0, 1, 4});
  CHECK(linked_objects(five, first, 0.4, false) == std::vector<std::size_t>{0});

  // Exactly 0.4 does not link: (0,0,10,10) vs (0,0,4,10).
  std::vector<BBox> edge{{0, 0, 10, 10}, {0, 0, 4, 10}};
  CHECK(linked_objects(edge, first, 0.4) == std::vector<std::size_t>{0});
}

TEST_CASE("mrm anchor rate") {
  MaskingConfig cfg;
  std::vector<BBox> boxes;
  for (int i = 0; i < 10; ++i) boxes.push_back({i * 10.0, 0, i * 10.0 + 5, 5});
  Rng rng(3);
  std::size_t anchors = 0;
  const int samples = 20000;
  for (int s = 0; s < samples; ++s) {
    auto plan = sample_mrm_plan(boxes, cfg, rng);
    anchors += plan.object_anchors.size();
    CHECK(plan.objects == plan.object_anchors);
  }
  CHECK(std::abs(anchors / (10.0 * samples) - 0.1) < 0.005);
}

TEST_CASE("apply masks") {
  auto v = vocab();
  auto pair = data::synth_corpus({.seed = 3, .num_images = 4}).pairs()[0];
  auto sample = data::to_sample(pair);
  Rng rng(9);

  auto same = apply_masks(sample, MaskPlan{}, v, rng);
  CHECK(same.tokens == sample.tokens);
  CHECK(same.features == sample.features);
  CHECK(std::all_of(same.msm_targets.begin(), same.msm_targets.end(), [](int t) { return t == kIgnoreTarget; }));
  CHECK(std::all_of(same.mrm_targets.begin(), same.mrm_targets.end(), [](int t) { return t == kIgnoreTarget; }));

  MaskPlan plan;
  plan.text = {{1, TokenAction::kKeep}, {2, TokenAction::kMaskToken}};
  plan.objects = {1};
  auto out = apply_masks(sample, plan, v, rng);
  CHECK(out.tokens[1] == sample.tokens[1]);
  CHECK(out.msm_targets[1] == sample.tokens[1]);
  CHECK(out.tokens[2] == v.mask_id);
  CHECK(out.msm_targets[2] == sample.tokens[2]);
  CHECK(out.msm_targets[0] == kIgnoreTarget);
  const std::size_t dim = sample.features.size() / sample.object_count();
  for (std::size_t d = 0; d < dim; ++d) {
    CHECK(out.features[dim + d] == 0);
    CHECK(out.features[d] == sample.features[d]);
  }
  CHECK(out.mrm_targets[1] == pair.objects[1].label);
  CHECK(out.mrm_targets[0] == kIgnoreTarget);

  MaskPlan random_plan;
  for (std::size_t i = 1; i + 1 < sample.tokens.size(); ++i) random_plan.text.push_back({i, TokenAction::kRandomToken});
  for (int trial = 0; trial < 200; ++trial) {
    auto r = apply_masks(sample, random_plan, v, rng);
    for (const auto& m : random_plan.text) CHECK(!v.is_special(r.tokens[m.position]));
  }
}

TEST_CASE("baseline preset") {
  auto c = MaskingConfig::single_unit();
  CHECK(c.text_anchor_prob == 0.15);
  CHECK(c.max_extension == 0);
  CHECK(!c.link_by_iou);
  CHECK_NOTHROW(c.validate());
  MaskingConfig bad;
  bad.mask_token_prob = 0.95;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
