#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ibt/tensor.hpp"

namespace ibt {

/// Named trainable tensors in insertion order.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Registers a parameter. Throws on a duplicate name.
  Tensor add(std::string name, Tensor tensor);

  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::size_t element_count() const;
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  void zero_grad();
  /// Deep copy of every tensor.
  [[nodiscard]] ParameterSet clone() const;
  /// Copies values from `source` for every name present in both sets.
  /// Returns the number of tensors copied; throws on shape mismatch.
  std::size_t import_values(const ParameterSet& source);

  /// True when both sets hold the same names, shapes and bit-identical values.
  [[nodiscard]] bool identical_to(const ParameterSet& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reverse pass that also guarantees every parameter ends up with a
/// gradient buffer, zero for parameters the loss does not reach.
void backward(const Tensor& loss, ParameterSet& params);

// Checkpoint container: "IBT1", u32 version, u32 parameter count, then per
// parameter u32 name length, UTF-8 name, u32 rank, u32 dims, f64 values.
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const ParameterSet& params, std::ostream& out);
ParameterSet read_checkpoint(std::istream& in);
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

struct GradCheckOptions {
  Real step = 1e-5;
  std::size_t sample_count = 200;
  std::uint64_t seed = 0;
};

struct GradCheckSample {
  std::string parameter;
  std::size_t index = 0;
  Real analytic = 0;
  Real numeric = 0;
  Real rel_error = 0;
};

struct GradCheckReport {
  Real max_rel_error = 0;
  std::vector<GradCheckSample> samples;
  [[nodiscard]] const GradCheckSample& worst() const;
};

/// Compares analytic gradients of `loss_fn` against central differences on
/// `sample_count` coordinates. Coordinates are drawn round-robin over the
/// parameters (uniformly within each) so small tensors are always covered.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                                  const GradCheckOptions& options = {});

}  // namespace ibt
