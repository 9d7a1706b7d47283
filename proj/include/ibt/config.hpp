#pragma once

#include <filesystem>
#include <string>

#include "ibt/model.hpp"
#include "ibt/training.hpp"
#include "json.hpp"

namespace ibt::config {

using Json = nlohmann::ordered_json;

/// Everything a command needs besides its data paths.
struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;

  static RunConfig toy() { return {}; }
  static RunConfig full();
  bool operator==(const RunConfig&) const = default;
};

/// {"model": {...}, "train": {..., "masking": {...}}} with every field present.
Json to_json(const RunConfig& config);

/// Sets the fields present in `json`, leaving the others as they are.
/// Unknown keys and wrongly typed values throw std::invalid_argument naming
/// the key path.
void overlay(RunConfig& config, const Json& json);

/// Parses a config file and overlays it on `base`.
RunConfig load(const std::filesystem::path& path, RunConfig base = {});

}  // namespace ibt::config
