#include "ibt/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ibt/eval.hpp"

namespace ibt::ablation {

std::vector<Arm> arms(double hard_negative_prob) {
  return {
      {"group_hn", masking::MaskingConfig::group(), hard_negative_prob},
      {"group_random", masking::MaskingConfig::group(), 0.0},
      {"single_hn", masking::MaskingConfig::single_unit(), hard_negative_prob},
      {"single_random", masking::MaskingConfig::single_unit(), 0.0},
  };
}

namespace {

double tail_mean(const std::vector<training::StepMetrics>& log, std::size_t window) {
  const std::size_t n = std::min(window, log.size());
  double s = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].total;
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

std::vector<ArmResult> run(const config::RunConfig& base, const data::Corpus& train, const data::Corpus& heldout,
                           const negatives::HardNegativeTable& table, const std::filesystem::path& out_dir,
                           std::uint64_t init_seed) {
  std::vector<ArmResult> results;
  for (const auto& arm : arms(base.train.hard_negative_prob)) {
    auto cfg = base.train;
    cfg.masking = arm.masking;
    cfg.hard_negative_prob = arm.hard_negative_prob;
    auto net = model::InterBert::initialize(base.model, init_seed);
    const auto log = training::pretrain(net, train, &table, cfg);

    ArmResult r;
    r.name = arm.name;
    r.first_total = log.front().total;
    r.final_total = tail_mean(log, 50);
    r.heldout_itm = eval::heldout_itm_accuracy(net, heldout, cfg.seed);
    const auto zs = eval::zero_shot_eval(net, heldout, 50);
    r.r1 = zs.r1;
    r.r5 = zs.r5;
    r.r10 = zs.r10;
    std::filesystem::create_directories(out_dir / arm.name);
    r.metrics_csv = out_dir / arm.name / "metrics.csv";
    training::save_metrics_csv(log, r.metrics_csv);
    results.push_back(r);
  }
  std::ofstream out(out_dir / "ablation_summary.csv", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "ablation_summary.csv").string());
  write_summary_csv(results, out);
  return results;
}

void write_summary_csv(const std::vector<ArmResult>& results, std::ostream& out) {
  out << "arm,first_total,final_total,heldout_itm,r1,r5,r10\n";
  char buf[512];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.name.c_str(), r.first_total,
                  r.final_total, r.heldout_itm, r.r1, r.r5, r.r10);
    out << buf;
  }
}

}  // namespace ibt::ablation
