// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ibt/ablation.hpp"
#include "ibt/config.hpp"
#include "ibt/eval.hpp"
#include "ibt/kernels.hpp"
#include "ibt/masking.hpp"
#include "ibt/model.hpp"
#include "ibt/negatives.hpp"
#include "ibt/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace ibt;

namespace {

// Tolerances and bounds.
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradSamples = 240;
constexpr double kGradSeconds = 60;
constexpr double kLayerTol = 1e-10;
constexpr double kAnchorRate = 0.100, kAnchorTol = 0.005;
constexpr double kMixTol = 0.01;
constexpr double kHardRate = 0.20, kHardTol = 0.01;
constexpr double kLossRatio = 0.50;
constexpr double kHeldoutItm = 0.90;
constexpr double kPretrainSeconds = 600;
constexpr double kZeroShotR1 = 0.10;
constexpr double kChoiceAcc = 0.90;
constexpr double kEmaGap = 0.02;
constexpr std::size_t kAblationSteps = 100;
constexpr double kAdamTol = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

config::RunConfig pinned(const char* name) {
  return config::load(fs::path(IBT_SOURCE_DIR) / "configs" / name);
}

void fit(model::ModelConfig& m, const data::Corpus& c, int num_classes) {
  m.vocab_size = static_cast<std::size_t>(c.vocab().size);
  m.object_feature_dim = c.feature_dim();
  m.num_object_classes = static_cast<std::size_t>(num_classes);
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions o;
  o.sample_count = kGradSamples;
  const auto r = training::tiny_gradient_check(o);
  const double secs = seconds_since(t0);
  const auto& w = r.worst();
  return {r.samples.size() >= 200 && r.max_rel_error < kGradTol && secs < kGradSeconds,
          fmt("%zu coordinates, max rel error %.3g (%s[%zu]), %.1f s", r.samples.size(),
              static_cast<double>(r.max_rel_error), w.parameter.c_str(), w.index, secs)};
}

// ---------------------------------------------------------------- 2

Outcome attention_oracle() {
  Rng rng(99);
  std::normal_distribution<double> normal(0.0, 0.5);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    model::ModelConfig cfg;
    cfg.hidden_size = 8;
    cfg.num_heads = 2;
    cfg.ffn_size = 12;
    cfg.num_interaction_layers = 1;
    cfg.variant = model::Variant::kSingleStream;
    auto net = model::InterBert::initialize(cfg, static_cast<std::uint64_t>(trial));
    auto& ps = net.parameters();
    oracle::LayerWeights w;
    auto draw = [&](const std::string& name, std::vector<double>& dst) {
      auto v = ps.get(name).mutable_values();
      for (auto& x : v) x = static_cast<Real>(normal(rng));
      dst.assign(v.begin(), v.end());
    };
    const std::string pre = "interaction.layer0.";
    draw(pre + "attention.wq", w.wq), draw(pre + "attention.bq", w.bq);
    draw(pre + "attention.wk", w.wk), draw(pre + "attention.bk", w.bk);
    draw(pre + "attention.wv", w.wv), draw(pre + "attention.bv", w.bv);
    draw(pre + "attention.wo", w.wo), draw(pre + "attention.bo", w.bo);
    draw(pre + "ln1.gain", w.ln1_g), draw(pre + "ln1.bias", w.ln1_b);
    draw(pre + "ffn.w1", w.w1), draw(pre + "ffn.b1", w.b1);
    draw(pre + "ffn.w2", w.w2), draw(pre + "ffn.b2", w.b2);
    draw(pre + "ln2.gain", w.ln2_g), draw(pre + "ln2.bias", w.ln2_b);

    const std::size_t L = 5 + static_cast<std::size_t>(trial % 6), H = cfg.hidden_size;
    std::vector<Real> x(L * H);
    for (auto& v : x) v = static_cast<Real>(normal(rng));
    std::vector<std::uint8_t> valid(L, 1);
    for (std::size_t j = 1; j < L; ++j) valid[j] = uniform_real(rng, 0, 1) < 0.8;
    const kernels::AttentionBlock block{0, L};
    const auto got = net.layer(Tensor::constant({L, H}, x), pre, std::span(&block, 1), valid);
    const auto want = oracle::naive_layer(std::vector<double>(x.begin(), x.end()), L, H, cfg.ffn_size, cfg.num_heads,
                                          w, std::vector<bool>(valid.begin(), valid.end()), cfg.ln_eps);
    for (std::size_t i = 0; i < L * H; ++i)
      worst = std::max(worst, std::abs(static_cast<double>(got.values()[i]) - want[i]));
  }
  return {worst < kLayerTol, fmt("20 inputs, max abs diff %.3g", worst)};
}

// ---------------------------------------------------------------- 3

Outcome masking_statistics() {
  const auto vocab = data::synth_vocabulary(16);
  std::vector<int> tokens{vocab.cls_id};
  for (int i = 0; i < 20; ++i) tokens.push_back(data::synth_class_token(i % 16));
  tokens.push_back(vocab.sep_id);

  const masking::MaskingConfig cfg;
  Rng rng(2024);
  const int samples = 100000;
  std::size_t anchors = 0, counts[3] = {0, 0, 0}, masked = 0;
  for (int s = 0; s < samples; ++s) {
    const auto plan = masking::sample_msm_plan(tokens, vocab, cfg, rng);
    anchors += plan.text_anchors.size();
    for (const auto& m : plan.text) ++counts[static_cast<int>(m.action)];
    masked += plan.text.size();
  }
  const double rate = static_cast<double>(anchors) / (20.0 * samples);
  const double n = static_cast<double>(masked);
  const double mix[3] = {counts[0] / n, counts[1] / n, counts[2] / n};
  bool ok = std::abs(rate - kAnchorRate) <= kAnchorTol && std::abs(mix[0] - 0.8) <= kMixTol &&
            std::abs(mix[1] - 0.1) <= kMixTol && std::abs(mix[2] - 0.1) <= kMixTol;

  // Integer layouts with plenty of overlap; the oracle counts grid cells.
  masking::MaskingConfig dense = cfg;
  dense.image_anchor_prob = 0.3;
  Rng layout_rng(31);
  int matched = 0;
  for (int layout = 0; layout < 50; ++layout) {
    const int count = uniform_int(layout_rng, 2, 10);
    std::vector<oracle::IntBox> ints;
    std::vector<data::BBox> boxes;
    for (int b = 0; b < count; ++b) {
      const int x1 = uniform_int(layout_rng, 0, 12), y1 = uniform_int(layout_rng, 0, 12);
      const int x2 = x1 + uniform_int(layout_rng, 1, 8), y2 = y1 + uniform_int(layout_rng, 1, 8);
      ints.push_back({x1, y1, x2, y2});
      boxes.push_back({static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                       static_cast<double>(y2)});
    }
    auto plan = masking::sample_mrm_plan(boxes, dense, layout_rng);
    if (plan.object_anchors.empty()) {
      plan.object_anchors = {static_cast<std::size_t>(layout % count)};
      plan.objects = masking::linked_objects(boxes, plan.object_anchors, dense.iou_threshold);
    }
    matched += plan.objects == oracle::iou_closure(ints, plan.object_anchors);
  }
  ok = ok && matched == 50;
  return {ok, fmt("anchor rate %.4f, mix %.4f/%.4f/%.4f, IoU layouts %d/50", rate, mix[0], mix[1], mix[2], matched)};
}

// ---------------------------------------------------------------- 4

Outcome mrm_blackout() {
  data::SynthOptions o;
  o.seed = 4;
  o.num_images = 30;
  o.max_objects = 8;
  const auto corpus = data::synth_corpus(o);
  auto mc = pinned("learning_signal.json").model;
  fit(mc, corpus, o.num_classes);
  const auto net = model::InterBert::initialize(mc, 4);

  masking::MaskingConfig cfg;
  cfg.image_anchor_prob = 0.4;
  Rng rng(8);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::size_t objects = 0, identical = 0, cases = 0, moved = 0;
  for (const auto& pair : corpus.pairs()) {
    const auto sample = data::to_sample(pair);
    const auto plan = masking::sample_plan(sample, corpus.vocab(), cfg, rng);
    if (plan.objects.empty()) continue;
    auto tampered = sample;
    for (auto k : plan.objects)
      for (std::size_t d = 0; d < corpus.feature_dim(); ++d)
        tampered.features[k * corpus.feature_dim() + d] = static_cast<Real>(normal(rng));
    const auto seed = rng();
    Rng r1(seed), r2(seed);
    std::vector<data::Sample> a{masking::apply_masks(sample, plan, corpus.vocab(), r1)};
    std::vector<data::Sample> b{masking::apply_masks(tampered, plan, corpus.vocab(), r2)};
    std::vector<data::Sample> raw{sample};
    const int pad = corpus.vocab().pad_id;
    const auto ba = data::make_batch(a, mc.max_text_len, mc.max_objects, pad);
    const auto bb = data::make_batch(b, mc.max_text_len, mc.max_objects, pad);
    const auto oa = net.forward(ba), ob = net.forward(bb);
    const auto on = net.forward(data::make_batch(raw, mc.max_text_len, mc.max_objects, pad));
    auto same = [](const Tensor& x, const Tensor& y) {
      const auto u = x.values(), v = y.values();
      return std::equal(u.begin(), u.end(), v.begin(), v.end());
    };
    const bool eq = same(oa.fused, ob.fused) && same(oa.h_image, ob.h_image) && same(oa.h_text, ob.h_text) &&
                    same(oa.pooled_image, ob.pooled_image) && same(oa.pooled_text, ob.pooled_text) &&
                    same(net.itm_logits(oa.pooled_image, oa.pooled_text),
                         net.itm_logits(ob.pooled_image, ob.pooled_text)) &&
                    same(net.mrm_logits(net.object_rows(oa.h_image, ba.layout)),
                         net.mrm_logits(net.object_rows(ob.h_image, bb.layout))) &&
                    same(net.msm_logits(oa.h_text), net.msm_logits(ob.h_text));
    identical += eq;
    moved += !same(on.pooled_image, oa.pooled_image);
    objects += plan.objects.size();
    ++cases;
  }
  return {cases >= 10 && identical == cases && moved == cases,
          fmt("%zu samples, %zu masked objects, %zu/%zu bit-identical", cases, objects, identical, cases)};
}

// ---------------------------------------------------------------- 5

Outcome hard_negative_mining() {
  data::SynthOptions o;
  o.seed = 5;
  o.num_images = 200;
  const auto corpus = data::synth_corpus(o);
  const auto index = negatives::TfIdfIndex::build(corpus);
  const auto table = negatives::HardNegativeTable::build(index);

  std::vector<std::string> texts;
  std::vector<std::int64_t> captions, images;
  std::vector<bool> empty;
  for (const auto& p : corpus.pairs()) {
    texts.push_back(negatives::caption_text(p.tokens, corpus.vocab()));
    captions.push_back(p.caption_id);
    images.push_back(p.image_id);
    empty.push_back(oracle::words(texts.back()).empty());
  }
  const auto sim = oracle::tfidf_cosine(texts);
  std::size_t rows_ok = 0, mined = 0;
  bool below = true;
  for (auto image : corpus.image_ids()) {
    const auto want = oracle::mine(sim, captions, images, empty, image);
    const auto got = negatives::mine_hard_negatives(index, image);
    bool same = got.size() == want.size() && got == table.row(image);
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].caption_id == want[i].caption_id &&
             std::abs(got[i].sim - static_cast<double>(want[i].sim)) < 1e-12;
    for (const auto& g : got) below = below && g.sim < 0.5;
    rows_ok += same;
    mined += got.size();
  }

  std::size_t anchor = 0;
  while (table.row(corpus.pairs()[anchor].image_id).empty()) ++anchor;
  Rng rng(1);
  const int draws = 100000;
  std::size_t hard = 0;
  for (int i = 0; i < draws; ++i) hard += negatives::sample_negative(corpus, anchor, &table, kHardRate, rng).hard;
  const double rate = hard / static_cast<double>(draws);
  return {rows_ok == corpus.image_ids().size() && below && mined > 0 && std::abs(rate - kHardRate) <= kHardTol,
          fmt("%zu/%zu images match, %zu mined, all sims < 0.5: %s, hard rate %.4f", rows_ok,
              corpus.image_ids().size(), mined, below ? "yes" : "no", rate)};
}

// ---------------------------------------------------------------- 6, 7, 8

struct Pretrained {
  data::Corpus train, heldout;
  config::RunConfig cfg;
  std::optional<model::InterBert> net;
  std::vector<training::StepMetrics> metrics;
  double seconds = 0;
};

Pretrained& pretrained() {
  static Pretrained p = [] {
    Pretrained r;
    data::SynthOptions o;
    o.seed = 1;
    o.num_images = 200;
    o.noise_std = 0.1;
    r.train = data::synth_corpus(o);
    o.seed = 2;
    o.num_images = 100;
    r.heldout = data::synth_corpus(o);
    r.cfg = pinned("learning_signal.json");
    fit(r.cfg.model, r.train, o.num_classes);
    const auto table = negatives::HardNegativeTable::build(negatives::TfIdfIndex::build(r.train));
    const int threads = kernels::max_threads();
    kernels::set_num_threads(1);
    const auto t0 = std::chrono::steady_clock::now();
    r.net.emplace(model::InterBert::initialize(r.cfg.model, 1));
    r.metrics = training::pretrain(*r.net, r.train, &table, r.cfg.train);
    r.seconds = seconds_since(t0);
    kernels::set_num_threads(threads);
    return r;
  }();
  return p;
}

Outcome learning_signal() {
  auto& p = pretrained();
  const auto& m = p.metrics;
  double tail = 0;
  const std::size_t n = std::min<std::size_t>(50, m.size());
  for (std::size_t i = m.size() - n; i < m.size(); ++i) tail += m[i].total;
  tail /= static_cast<double>(n);
  const double ratio = tail / m.front().total;
  const double itm = eval::heldout_itm_accuracy(*p.net, p.heldout, 7);
  return {m.size() == 500 && ratio <= kLossRatio && itm >= kHeldoutItm && p.seconds < kPretrainSeconds,
          fmt("%zu steps, total loss %.4f -> %.4f (ratio %.3f), held-out ITM %.3f, %.0f s", m.size(), m.front().total,
              tail, ratio, itm, p.seconds)};
}

Outcome zero_shot() {
  auto& p = pretrained();
  const auto r = eval::zero_shot_eval(*p.net, p.heldout, 50);
  return {r.pool_size == 50 && r.r1 >= kZeroShotR1,
          fmt("%zu pools of %zu, R@1 %.3f R@5 %.3f R@10 %.3f (chance R@1 %.3f)", r.pools, r.pool_size, r.r1, r.r5,
              r.r10, 1.0 / static_cast<double>(r.pool_size))};
}

Outcome finetuning() {
  auto& p = pretrained();
  auto ft = pinned("finetune.json");
  auto net = model::InterBert(p.net->config(), p.net->parameters().clone());
  const double before = eval::multiple_choice_accuracy(net, p.heldout, 11);
  auto result = training::finetune_retrieval(net, p.train, ft.train);
  const model::InterBert ema(net.config(), std::move(result.ema));
  const double raw = eval::multiple_choice_accuracy(net, p.heldout, 11);
  const double smooth = eval::multiple_choice_accuracy(ema, p.heldout, 11);
  const bool differs = !ema.parameters().identical_to(net.parameters());
  return {raw >= kChoiceAcc && differs && std::abs(smooth - raw) <= kEmaGap + 1e-12,
          fmt("4-way accuracy %.3f before, %.3f raw, %.3f EMA (differs: %s)", before, raw, smooth,
              differs ? "yes" : "no")};
}

// ---------------------------------------------------------------- 9

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(IBT_BINARY_DIR) / "acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

Outcome ablation_machinery() {
  data::SynthOptions o;
  o.seed = 1;
  o.num_images = 200;
  const auto train = data::synth_corpus(o);
  o.seed = 2;
  o.num_images = 100;
  const auto heldout = data::synth_corpus(o);
  auto base = pinned("learning_signal.json");
  fit(base.model, train, o.num_classes);
  base.train.total_steps = kAblationSteps;
  base.train.warmup_steps = 10;
  const auto table = negatives::HardNegativeTable::build(negatives::TfIdfIndex::build(train));
  const auto dir = scratch("ablation");
  const auto results = ablation::run(base, train, heldout, table, dir, 1);

  std::set<std::string> names;
  std::string detail;
  bool ok = results.size() == 4;
  for (const auto& r : results) {
    names.insert(r.name);
    ok = ok && line_count(r.metrics_csv) == kAblationSteps + 1 && std::isfinite(r.final_total) &&
         std::isfinite(r.heldout_itm);
    detail += fmt(" %s %.3f->%.3f itm %.2f r1 %.2f;", r.name.c_str(), r.first_total, r.final_total, r.heldout_itm,
                  r.r1);
  }
  ok = ok && names.size() == 4 && line_count(dir / "ablation_summary.csv") == 5;
  return {ok, fmt("%zu arms x %zu steps:", results.size(), kAblationSteps) + detail};
}

// ---------------------------------------------------------------- 10

Outcome cli_determinism() {
  const auto dir = scratch("cli");
  const std::string cli = IBT_CLI_PATH;
  auto run = [&](const std::string& args) {
    const auto cmd = "\"" + cli + "\" " + args + " > \"" + (dir / "log.txt").string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const auto d = [&](const char* sub) { return "\"" + (dir / sub).string() + "\""; };
  const std::string data = " --corpus " + d("synth/corpus.jsonl") + " --vocab " + d("synth/vocab.json");
  const std::string train = " --steps 12 --warmup 3 --batch-size 16";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "synth-data --out-dir " + d("synth") + " --num-images 40 --heldout-images 20 --seed 3"},
      {"mine", "mine-negatives --out-dir " + d("mine") + data},
      {"pretrain", "pretrain --out-dir " + d("pretrain") + data + train + " --negatives " +
                       d("mine/negatives.jsonl")},
      {"finetune", "finetune --out-dir " + d("finetune") + data + train + " --checkpoint " +
                       d("pretrain/checkpoint.bin")},
      {"eval", "eval --out-dir " + d("eval") + " --corpus " + d("synth/heldout.jsonl") + " --vocab " +
                   d("synth/vocab.json") + " --pool-size 10 --checkpoint " + d("finetune/ema.bin")},
      {"gradcheck", "gradcheck --out-dir " + d("gradcheck") + " --samples 40"},
      {"embed", "embed --out-dir " + d("embed") + data + " --checkpoint " + d("pretrain/checkpoint.bin")},
      {"knn", "knn --out-dir " + d("knn") + " --embeddings " + d("embed/embeddings.bin") + " --trigger 0 -k 5"},
      {"ablate", "ablate --out-dir " + d("ablate") + data + " --heldout " + d("synth/heldout.jsonl") +
                     " --steps 6 --warmup 2 --batch-size 16 --negatives " + d("mine/negatives.jsonl")},
  };
  std::size_t replayed = 0;
  std::string failed;
  for (const auto& [name, args] : commands) {
    if (run(args) != 0) {
      failed += " " + name + "(run)";
      continue;
    }
    const auto manifest = dir / name / "manifest.json";
    if (run("replay --manifest \"" + manifest.string() + "\" --out-dir " + d((name + "_replay").c_str())) != 0) {
      failed += " " + name + "(replay)";
      continue;
    }
    ++replayed;
  }
  return {replayed == commands.size(),
          fmt("%zu/%zu commands replayed bit-identically", replayed, commands.size()) +
              (failed.empty() ? "" : "; failed:" + failed)};
}

// ---------------------------------------------------------------- 11

Outcome scheduler_optimizer() {
  const training::TrainConfig c;
  const bool sched = training::lr_at(0, c) == 0.0 && training::lr_at(c.warmup_steps, c) == 1e-4 &&
                     training::lr_at(c.total_steps, c) == 0.0;

  ParameterSet ps;
  const std::vector<Real> w0{0.5, -1.25, 2.0, 0.0, 3.5, -0.75}, b0{0.25, -0.5};
  const std::vector<Real> gw{0.1, -2.0, 0.0, 1e-3, 5.0, -0.3}, gb{-1.0, 0.2};
  ps.add("w", Tensor::parameter({2, 3}, w0));
  ps.add("b", Tensor::parameter({2}, b0));
  std::copy(gw.begin(), gw.end(), ps.get("w").grad().begin());
  std::copy(gb.begin(), gb.end(), ps.get("b").grad().begin());
  training::OptimizerState st;
  const double lr = 3e-4;
  training::adamw_step(ps, st, lr, c);

  auto expected = [&](long double p, long double g, bool decay) {
    const long double m = (1 - static_cast<long double>(c.beta1)) * g;
    const long double v = (1 - static_cast<long double>(c.beta2)) * g * g;
    const long double mh = m / (1 - static_cast<long double>(c.beta1));
    const long double vh = v / (1 - static_cast<long double>(c.beta2));
    const long double shrink = decay ? 1 - static_cast<long double>(lr) * c.weight_decay : 1;
    return p * shrink - static_cast<long double>(lr) * mh / (std::sqrt(vh) + static_cast<long double>(c.eps));
  };
  long double worst = 0;
  for (std::size_t i = 0; i < w0.size(); ++i)
    worst = std::max(worst, std::abs(ps.get("w").values()[i] - expected(w0[i], gw[i], true)));
  for (std::size_t i = 0; i < b0.size(); ++i)
    worst = std::max(worst, std::abs(ps.get("b").values()[i] - expected(b0[i], gb[i], false)));
  return {sched && worst < kAdamTol,
          fmt("lr_at(0)=%g lr_at(%zu)=%g lr_at(%zu)=%g, AdamW max error %.3g", training::lr_at(0, c), c.warmup_steps,
              training::lr_at(c.warmup_steps, c), c.total_steps, training::lr_at(c.total_steps, c),
              static_cast<double>(worst))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"attention oracle equivalence", attention_oracle},
      {"masking statistics", masking_statistics},
      {"MRM blackout", mrm_blackout},
      {"hard-negative mining", hard_negative_mining},
      {"learning signal", learning_signal},
      {"zero-shot transfer", zero_shot},
      {"finetuning protocol", finetuning},
      {"ablation machinery", ablation_machinery},
      {"determinism", cli_determinism},
      {"scheduler and optimizer values", scheduler_optimizer},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::strtoul(argv[i], nullptr, 10));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    failures += !out.pass;
    std::printf("%s %2zu %s: %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
