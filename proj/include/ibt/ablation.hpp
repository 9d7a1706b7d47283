#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ibt/config.hpp"
#include "ibt/data.hpp"
#include "ibt/negatives.hpp"

namespace ibt::ablation {

struct Arm {
  std::string name;
  masking::MaskingConfig masking;
  double hard_negative_prob = 0;
};

/// {group, single_unit} masking x {hard negatives at the configured rate, random only}.
std::vector<Arm> arms(double hard_negative_prob = 0.2);

struct ArmResult {
  std::string name;
  double first_total = 0;
  double final_total = 0;  // mean over the last min(50, steps) steps
  double heldout_itm = 0;
  double r1 = 0, r5 = 0, r10 = 0;
  std::filesystem::path metrics_csv;
};

/// Pretrains one model per arm from the same initialization and data order,
/// writing <out_dir>/<arm>/metrics.csv and <out_dir>/ablation_summary.csv.
std::vector<ArmResult> run(const config::RunConfig& base, const data::Corpus& train, const data::Corpus& heldout,
                           const negatives::HardNegativeTable& table, const std::filesystem::path& out_dir,
                           std::uint64_t init_seed);

void write_summary_csv(const std::vector<ArmResult>& results, std::ostream& out);

}  // namespace ibt::ablation
