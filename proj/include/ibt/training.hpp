#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ibt/data.hpp"
#include "ibt/masking.hpp"
#include "ibt/model.hpp"
#include "ibt/negatives.hpp"
#include "ibt/parameters.hpp"

namespace ibt::training {

struct TrainConfig {
  Real lambda_msm = 1;
  Real lambda_mrm = 1;
  Real lambda_itm = 1;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.9999;
  double eps = 1e-6;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 500;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double ema_rate = 0.9999;
  double hard_negative_prob = 0.2;
  /// Score ITM on a second, unmasked forward instead of the masked inputs.
  bool itm_unmasked = false;
  /// Keep MSM/MRM targets on negative pairs.
  bool targets_on_negatives = false;
  masking::MaskingConfig masking;

  static TrainConfig full();
  static TrainConfig toy() { return {}; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------- losses

/// Cross-entropy over text rows whose target is set; 0 when none are.
Tensor msm_loss(const model::InterBert& net, const Tensor& h_text, std::span<const int> targets);
/// Cross-entropy over object rows (o_[CLS] excluded) whose target is set.
Tensor mrm_loss(const model::InterBert& net, const Tensor& h_image, const data::SequenceLayout& layout,
                std::span<const int> targets);
/// Mean binary cross-entropy with logits.
Tensor itm_loss(const Tensor& logits, std::span<const Real> labels);
/// lambda_msm * msm + lambda_mrm * mrm + lambda_itm * itm.
Tensor total_loss(const Tensor& msm, const Tensor& mrm, const Tensor& itm, const TrainConfig& config);

struct LossParts {
  Tensor msm, mrm, itm, total;
  double itm_accuracy = 0;
};

/// Forward plus all three losses. With `itm_batch` the ITM term is scored on
/// that batch instead of `batch`.
LossParts pretraining_losses(const model::InterBert& net, const data::Batch& batch, const TrainConfig& config,
                             const data::Batch* itm_batch = nullptr);

/// Fraction of logits whose sign agrees with the label (logit > 0 means match).
double itm_accuracy(std::span<const Real> logits, std::span<const Real> labels);

// ---------------------------------------------------------------- optimization

/// Linear warmup from 0 to the base rate, then linear decay to 0 at total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

struct OptimizerState {
  std::vector<std::vector<Real>> m, v;
  std::uint64_t step = 0;
};

/// True for parameters that take weight decay: every matrix. Vectors
/// (biases, layer-norm gains and offsets) are exempt.
bool decays(const Tensor& parameter);

/// Decoupled-weight-decay Adam with bias correction. Throws
/// std::runtime_error naming the parameter when a gradient is not finite.
void adamw_step(ParameterSet& params, OptimizerState& state, double lr, const TrainConfig& config);

/// shadow = rate * shadow + (1 - rate) * params, by name.
void ema_update(ParameterSet& shadow, const ParameterSet& params, double rate);

// ---------------------------------------------------------------- loops

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double msm_loss = 0;
  double mrm_loss = 0;
  double itm_loss = 0;
  double total = 0;
  double itm_acc = 0;
};

/// CSV with header step,lr,msm_loss,mrm_loss,itm_loss,total,itm_acc.
void write_metrics_csv(const std::vector<StepMetrics>& metrics, std::ostream& out);
void save_metrics_csv(const std::vector<StepMetrics>& metrics, const std::filesystem::path& path);

using StepCallback = std::function<void(const StepMetrics&)>;

/// Builds the batch for one pretraining step: half positives, half negatives,
/// all masked. `unmasked` receives the same pairs before masking.
data::Batch pretraining_batch(const data::Corpus& corpus, const negatives::HardNegativeTable* table,
                              std::span<const std::size_t> anchors, const model::ModelConfig& model_config,
                              const TrainConfig& config, Rng& rng, data::Batch* unmasked = nullptr);

/// Runs total_steps updates on `net` in place. Deterministic given the
/// seed. Throws std::runtime_error when the loss stops being finite.
std::vector<StepMetrics> pretrain(model::InterBert& net, const data::Corpus& corpus,
                                  const negatives::HardNegativeTable* table, const TrainConfig& config,
                                  const StepCallback& on_step = {});

struct FinetuneResult {
  std::vector<StepMetrics> metrics;  // itm_loss holds the 4-way loss, itm_acc the 4-way accuracy
  ParameterSet ema;
};

/// Number of candidates per caption in multiple-choice finetuning.
inline constexpr std::size_t kChoices = 4;

/// Index of `image_index`'s image plus distinct distractor images, drawn
/// uniformly without replacement. Returns indices into corpus.image_ids().
std::vector<std::size_t> draw_distractors(const data::Corpus& corpus, std::size_t image_index, std::size_t count,
                                          Rng& rng);

/// Batch for multiple choice: per caption kChoices rows, the true image first.
data::Batch choice_batch(const data::Corpus& corpus, std::span<const std::size_t> pair_indices,
                         const model::ModelConfig& model_config, Rng& rng);

/// Cross-entropy over the kChoices ITM logits of each caption (true index 0).
Tensor choice_loss(const model::InterBert& net, const data::Batch& batch, double* accuracy = nullptr);

/// 4-way multiple-choice finetuning of the ITM head and encoder, no masking.
/// Keeps an EMA of the weights, seeded from the starting weights.
FinetuneResult finetune_retrieval(model::InterBert& net, const data::Corpus& corpus, const TrainConfig& config,
                                  const StepCallback& on_step = {});

/// Finite-difference check of the full pretraining loss (all three terms) on
/// a tiny model: hidden 8, 2 heads, 2 interaction + 1 extraction layers,
/// vocab 50, 4 objects, init_std 0.3. Throws std::logic_error if the sampled
/// batch leaves MSM or MRM without targets.
GradCheckReport tiny_gradient_check(const GradCheckOptions& options = {});

}  // namespace ibt::training
