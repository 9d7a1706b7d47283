#include "ibt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "ibt/ops.hpp"

namespace ibt::training {

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.warmup_steps = 10000;
  c.batch_size = 512;
  c.total_steps = 100000;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(learning_rate >= 0)) fail("learning_rate must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must be in [0,1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (total_steps == 0) fail("total_steps must be positive");
  if (warmup_steps > total_steps) fail("warmup_steps must not exceed total_steps");
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (!(ema_rate >= 0 && ema_rate <= 1)) fail("ema_rate must be in [0,1]");
  if (!(hard_negative_prob >= 0 && hard_negative_prob <= 1)) fail("hard_negative_prob must be in [0,1]");
  masking.validate();
}

namespace {

std::vector<std::size_t> rows_with_targets(std::span<const int> targets, std::vector<int>& kept) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] != kIgnoreTarget) {
      rows.push_back(i);
      kept.push_back(targets[i]);
    }
  return rows;
}

}  // namespace

Tensor msm_loss(const model::InterBert& net, const Tensor& h_text, std::span<const int> targets) {
  if (targets.size() != h_text.rows()) throw std::invalid_argument("msm_loss: one target per text row expected");
  std::vector<int> kept;
  const auto rows = rows_with_targets(targets, kept);
  if (rows.empty()) return Tensor::scalar(0);
  return cross_entropy_logits(net.msm_logits(gather_rows(h_text, rows)), kept);
}

Tensor mrm_loss(const model::InterBert& net, const Tensor& h_image, const data::SequenceLayout& layout,
                std::span<const int> targets) {
  if (targets.size() != layout.batch * layout.max_objects()) {
    throw std::invalid_argument("mrm_loss: one target per object slot expected");
  }
  std::vector<int> kept;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < layout.batch; ++b)
    for (std::size_t k = 0; k < layout.max_objects(); ++k) {
      const int t = targets[b * layout.max_objects() + k];
      if (t == kIgnoreTarget) continue;
      rows.push_back(b * layout.image_len + k + 1);
      kept.push_back(t);
    }
  if (rows.empty()) return Tensor::scalar(0);
  return cross_entropy_logits(net.mrm_logits(gather_rows(h_image, rows)), kept);
}

Tensor itm_loss(const Tensor& logits, std::span<const Real> labels) { return bce_with_logits(logits, labels); }

Tensor total_loss(const Tensor& msm, const Tensor& mrm, const Tensor& itm, const TrainConfig& config) {
  return add(add(scale(msm, config.lambda_msm), scale(mrm, config.lambda_mrm)), scale(itm, config.lambda_itm));
}

double itm_accuracy(std::span<const Real> logits, std::span<const Real> labels) {
  if (logits.empty()) return 0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) right += (logits[i] > 0) == (labels[i] > Real{0.5});
  return static_cast<double>(right) / static_cast<double>(logits.size());
}

LossParts pretraining_losses(const model::InterBert& net, const data::Batch& batch, const TrainConfig& config,
                             const data::Batch* itm_batch) {
  const auto out = net.forward(batch);
  LossParts parts;
  parts.msm = msm_loss(net, out.h_text, batch.msm_targets);
  parts.mrm = mrm_loss(net, out.h_image, batch.layout, batch.mrm_targets);
  Tensor logits;
  if (itm_batch) {
    const auto clean = net.forward(*itm_batch);
    logits = net.itm_logits(clean.pooled_image, clean.pooled_text);
  } else {
    logits = net.itm_logits(out.pooled_image, out.pooled_text);
  }
  const auto& labels = itm_batch ? itm_batch->itm_labels : batch.itm_labels;
  parts.itm = itm_loss(logits, labels);
  parts.total = total_loss(parts.msm, parts.mrm, parts.itm, config);
  parts.itm_accuracy = itm_accuracy(logits.values(), labels);
  return parts;
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step > c.total_steps) throw std::out_of_range("lr_at: step beyond total_steps");
  if (step < c.warmup_steps) {
    return c.learning_rate * (static_cast<double>(step) / static_cast<double>(c.warmup_steps));
  }
  if (c.total_steps == c.warmup_steps) return c.learning_rate;
  return c.learning_rate *
         (static_cast<double>(c.total_steps - step) / static_cast<double>(c.total_steps - c.warmup_steps));
}

bool decays(const Tensor& parameter) { return parameter.rank() >= 2; }

void adamw_step(ParameterSet& params, OptimizerState& state, double lr, const TrainConfig& c) {
  if (state.m.empty()) {
    for (const auto& e : params) {
      state.m.emplace_back(e.tensor.size(), Real{0});
      state.v.emplace_back(e.tensor.size(), Real{0});
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match");
  for (auto& e : params) {
    if (!e.tensor.has_grad()) continue;
    for (Real g : e.tensor.grad())
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in " + e.name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1 - std::pow(c.beta1, t);
  const double correction2 = 1 - std::pow(c.beta2, t);
  std::size_t i = 0;
  for (auto& e : params) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    ++i;
    if (m.size() != e.tensor.size()) throw std::invalid_argument("adamw_step: moment shape mismatch for " + e.name);
    if (!e.tensor.has_grad()) continue;
    const auto g = std::as_const(e.tensor).grad();
    auto p = e.tensor.mutable_values();
    const double shrink = decays(e.tensor) ? 1 - lr * c.weight_decay : 1.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<Real>(c.beta1 * m[k] + (1 - c.beta1) * g[k]);
      v[k] = static_cast<Real>(c.beta2 * v[k] + (1 - c.beta2) * g[k] * g[k]);
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] = static_cast<Real>(p[k] * shrink - lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

void ema_update(ParameterSet& shadow, const ParameterSet& params, double rate) {
  for (auto& e : shadow) {
    const auto src = params.get(e.name).values();
    auto dst = e.tensor.mutable_values();
    if (src.size() != dst.size()) throw std::invalid_argument("ema_update: shape mismatch for " + e.name);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<Real>(rate * dst[k] + (1 - rate) * src[k]);
  }
}

void write_metrics_csv(const std::vector<StepMetrics>& metrics, std::ostream& out) {
  out << "step,lr,msm_loss,mrm_loss,itm_loss,total,itm_acc\n";
  char buf[256];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.step, m.lr, m.msm_loss, m.mrm_loss,
                  m.itm_loss, m.total, m.itm_acc);
    out << buf;
  }
}

void save_metrics_csv(const std::vector<StepMetrics>& metrics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(metrics, out);
}

data::Batch pretraining_batch(const data::Corpus& corpus, const negatives::HardNegativeTable* table,
                              std::span<const std::size_t> anchors, const model::ModelConfig& model_config,
                              const TrainConfig& config, Rng& rng, data::Batch* unmasked) {
  negatives::ItmOptions opt;
  opt.hard_prob = config.hard_negative_prob;
  opt.mask = false;
  opt.masking = config.masking;
  opt.targets_on_negatives = config.targets_on_negatives;
  auto samples = negatives::make_itm_batch(corpus, table, anchors, opt, rng);
  const int pad = corpus.vocab().pad_id;
  if (unmasked) *unmasked = data::make_batch(samples, model_config.max_text_len, model_config.max_objects, pad);
  negatives::mask_itm_samples(samples, corpus.vocab(), opt, rng);
  return data::make_batch(samples, model_config.max_text_len, model_config.max_objects, pad);
}

namespace {

/// Cycles through shuffled permutations of [0, n).
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) { std::iota(order_.begin(), order_.end(), 0); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (pos_ == 0) std::shuffle(order_.begin(), order_.end(), rng_);
      out.push_back(order_[pos_]);
      pos_ = (pos_ + 1) % order_.size();
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

void check_finite(const Tensor& loss, std::size_t step) {
  if (!std::isfinite(loss.item())) {
    throw std::runtime_error("loss diverged at step " + std::to_string(step));
  }
}

}  // namespace

std::vector<StepMetrics> pretrain(model::InterBert& net, const data::Corpus& corpus,
                                  const negatives::HardNegativeTable* table, const TrainConfig& config,
                                  const StepCallback& on_step) {
  config.validate();
  if (corpus.image_ids().size() < 2) throw std::invalid_argument("pretrain: corpus needs at least two images");
  Rng rng(config.seed);
  EpochSampler sampler(corpus.size(), rng);
  OptimizerState state;
  auto& params = net.parameters();
  std::vector<StepMetrics> log;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const auto anchors = sampler.next(config.batch_size);
    data::Batch clean;
    const auto batch = pretraining_batch(corpus, table, anchors, net.config(), config, rng,
                                         config.itm_unmasked ? &clean : nullptr);
    const auto parts = pretraining_losses(net, batch, config, config.itm_unmasked ? &clean : nullptr);
    check_finite(parts.total, step);
    params.zero_grad();
    backward(parts.total, params);
    const double lr = lr_at(step, config);
    adamw_step(params, state, lr, config);
    StepMetrics m{step, lr, parts.msm.item(), parts.mrm.item(), parts.itm.item(), parts.total.item(),
                  parts.itm_accuracy};
    log.push_back(m);
    if (on_step) on_step(m);
  }
  params.zero_grad();
  return log;
}

std::vector<std::size_t> draw_distractors(const data::Corpus& corpus, std::size_t image_index, std::size_t count,
                                          Rng& rng) {
  const std::size_t n = corpus.image_ids().size();
  if (n < count + 1) throw std::invalid_argument("not enough images for " + std::to_string(count) + " distractors");
  std::vector<std::size_t> out{image_index};
  while (out.size() < count + 1) {
    const auto pick = uniform_int<std::size_t>(rng, 0, n - 1);
    if (std::find(out.begin(), out.end(), pick) == out.end()) out.push_back(pick);
  }
  return out;
}

data::Batch choice_batch(const data::Corpus& corpus, std::span<const std::size_t> pair_indices,
                         const model::ModelConfig& model_config, Rng& rng) {
  std::unordered_map<std::int64_t, std::size_t> image_index;
  for (std::size_t i = 0; i < corpus.image_ids().size(); ++i) image_index[corpus.image_ids()[i]] = i;
  std::vector<data::Sample> samples;
  for (auto idx : pair_indices) {
    const auto& caption = corpus.pairs()[idx];
    const auto images = draw_distractors(corpus, image_index.at(caption.image_id), kChoices - 1, rng);
    for (std::size_t c = 0; c < images.size(); ++c) {
      auto s = data::combine(corpus.image_record(corpus.image_ids()[images[c]]), caption);
      s.itm_label = c == 0 ? 1 : 0;
      samples.push_back(std::move(s));
    }
  }
  return data::make_batch(samples, model_config.max_text_len, model_config.max_objects, corpus.vocab().pad_id);
}

Tensor choice_loss(const model::InterBert& net, const data::Batch& batch, double* accuracy) {
  const auto out = net.forward(batch);
  const std::size_t captions = batch.layout.batch / kChoices;
  auto logits = reshape(net.itm_logits(out.pooled_image, out.pooled_text), {captions, kChoices});
  if (accuracy) {
    std::size_t right = 0;
    for (std::size_t r = 0; r < captions; ++r) {
      bool best = true;
      for (std::size_t c = 1; c < kChoices; ++c) best &= logits.at(r, 0) > logits.at(r, c);
      right += best;
    }
    *accuracy = captions ? static_cast<double>(right) / static_cast<double>(captions) : 0.0;
  }
  std::vector<int> targets(captions, 0);
  return cross_entropy_logits(logits, targets);
}

FinetuneResult finetune_retrieval(model::InterBert& net, const data::Corpus& corpus, const TrainConfig& config,
                                  const StepCallback& on_step) {
  config.validate();
  if (corpus.image_ids().size() < kChoices) throw std::invalid_argument("finetune: corpus needs at least 4 images");
  Rng rng(config.seed);
  EpochSampler sampler(corpus.size(), rng);
  OptimizerState state;
  auto& params = net.parameters();
  FinetuneResult result;
  result.ema = params.clone();
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const auto captions = sampler.next(std::max<std::size_t>(1, config.batch_size / kChoices));
    const auto batch = choice_batch(corpus, captions, net.config(), rng);
    double acc = 0;
    auto loss = choice_loss(net, batch, &acc);
    check_finite(loss, step);
    params.zero_grad();
    backward(loss, params);
    const double lr = lr_at(step, config);
    adamw_step(params, state, lr, config);
    ema_update(result.ema, params, config.ema_rate);
    StepMetrics m{step, lr, 0, 0, loss.item(), loss.item(), acc};
    result.metrics.push_back(m);
    if (on_step) on_step(m);
  }
  params.zero_grad();
  return result;
}

GradCheckReport tiny_gradient_check(const GradCheckOptions& options) {
  data::SynthOptions o;
  o.seed = 3;
  o.num_images = 8;
  o.num_classes = 6;
  o.feature_dim = 8;
  o.max_objects = 4;
  const auto corpus = data::synth_corpus(o);
  model::ModelConfig m;
  m.hidden_size = 8;
  m.num_heads = 2;
  m.ffn_size = 16;
  m.num_interaction_layers = 2;
  m.num_extraction_layers = 1;
  m.vocab_size = 50;
  m.object_feature_dim = o.feature_dim;
  m.max_objects = 4;
  m.num_object_classes = 6;
  // At 0.02 the query/key gradients sit near 1e-8, below central-difference resolution.
  m.init_std = 0.3;
  auto net = model::InterBert::initialize(m, 5);
  TrainConfig cfg;
  cfg.masking.text_anchor_prob = 0.4;
  cfg.masking.image_anchor_prob = 0.4;
  Rng rng(6);
  const std::vector<std::size_t> anchors{0, 1, 2, 3, 4, 5};
  const auto batch = pretraining_batch(corpus, nullptr, anchors, m, cfg, rng);
  const auto parts = pretraining_losses(net, batch, cfg);
  if (!(parts.msm.item() > 0 && parts.mrm.item() > 0 && parts.itm.item() > 0)) {
    throw std::logic_error("gradient check batch does not exercise every loss");
  }
  return finite_diff_check([&] { return pretraining_losses(net, batch, cfg).total; }, net.parameters(), options);
}

}  // namespace ibt::training
