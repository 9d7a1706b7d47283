#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ibt/data.hpp"
#include "ibt/masking.hpp"
#include "ibt/random.hpp"

namespace ibt::negatives {

/// Lowercases and splits on every non-alphanumeric character.
std::vector<std::string> tokenize(std::string_view text);

/// Space-joined names of the non-special tokens. Ids without a name become
/// "tok<id>".
std::string caption_text(std::span<const int> tokens, const data::Vocabulary& vocab);

struct TermWeight {
  std::uint32_t term = 0;
  double weight = 0;
};

/// TF-IDF over captions: tf = count / caption length, idf = ln(N / df) + 1,
/// vectors L2-normalized so that cosine similarity is a dot product.
class TfIdfIndex {
 public:
  /// Documents are the corpus captions in corpus order.
  static TfIdfIndex build(const data::Corpus& corpus);
  static TfIdfIndex build(const std::vector<std::string>& texts, std::vector<std::int64_t> caption_ids,
                          std::vector<std::int64_t> image_ids);

  [[nodiscard]] std::size_t size() const { return vectors_.size(); }
  [[nodiscard]] std::int64_t caption_id(std::size_t doc) const { return caption_ids_[doc]; }
  [[nodiscard]] std::int64_t image_id(std::size_t doc) const { return image_ids_[doc]; }
  [[nodiscard]] const std::vector<TermWeight>& vector(std::size_t doc) const { return vectors_[doc]; }
  [[nodiscard]] const std::vector<std::string>& terms() const { return terms_; }
  [[nodiscard]] std::size_t document_frequency(std::uint32_t term) const { return df_[term]; }
  [[nodiscard]] double idf(std::uint32_t term) const;
  /// Captions that tokenized to nothing; they never act as candidates.
  [[nodiscard]] const std::vector<std::int64_t>& skipped() const { return skipped_; }
  /// Document indices of an image's captions in corpus order.
  [[nodiscard]] const std::vector<std::size_t>& documents_of_image(std::int64_t image_id) const;
  [[nodiscard]] const std::vector<std::int64_t>& image_order() const { return image_order_; }

  /// Cosine similarity of two documents. Products are summed in ascending
  /// order of value so equal multisets give bit-equal results.
  [[nodiscard]] double similarity(std::size_t a, std::size_t b) const;

 private:
  std::vector<std::string> terms_;
  std::vector<std::size_t> df_;
  std::vector<std::vector<TermWeight>> vectors_;
  std::vector<std::int64_t> caption_ids_;
  std::vector<std::int64_t> image_ids_;
  std::vector<std::int64_t> skipped_;
  std::vector<std::int64_t> image_order_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> docs_of_image_;
};

struct HardNegative {
  std::int64_t caption_id = 0;
  double sim = 0;
  bool operator==(const HardNegative&) const = default;
};

struct MiningOptions {
  double max_similarity = 0.5;  // candidates need sim < max_similarity
  std::size_t top_k = 30;
};

/// Hard negatives for one image: captions of other images whose similarity
/// to the image's first caption is below the threshold, best `top_k` by
/// descending similarity, ties by ascending caption id.
std::vector<HardNegative> mine_hard_negatives(const TfIdfIndex& index, std::int64_t image_id,
                                              const MiningOptions& options = {});

class HardNegativeTable {
 public:
  /// Mines every image of the index; parallel over images.
  static HardNegativeTable build(const TfIdfIndex& index, const MiningOptions& options = {});

  [[nodiscard]] const std::vector<HardNegative>& row(std::int64_t image_id) const;
  [[nodiscard]] const std::map<std::int64_t, std::vector<HardNegative>>& rows() const { return rows_; }
  void set_row(std::int64_t image_id, std::vector<HardNegative> row) { rows_[image_id] = std::move(row); }
  bool operator==(const HardNegativeTable&) const = default;

 private:
  std::map<std::int64_t, std::vector<HardNegative>> rows_;
};

// Table JSONL, ascending image_id: {"image_id":..,"negatives":[{"caption_id":..,"sim":..}]}
void write_table(const HardNegativeTable& table, std::ostream& out);
HardNegativeTable read_table(std::istream& in);
void save_table(const HardNegativeTable& table, const std::filesystem::path& path);
HardNegativeTable load_table(const std::filesystem::path& path);

struct NegativeDraw {
  std::size_t pair_index = 0;  // caption source, index into corpus.pairs()
  bool hard = false;
};

/// Negative caption for the image of `corpus.pairs()[pair_index]`. With
/// probability `hard_prob` a uniform pick from the image's hard row (random
/// when the row is empty), otherwise uniform over captions of other images.
NegativeDraw sample_negative(const data::Corpus& corpus, std::size_t pair_index, const HardNegativeTable* table,
                             double hard_prob, Rng& rng);

struct ItmOptions {
  double hard_prob = 0.2;
  /// Mask every sample before it goes to the model.
  bool mask = true;
  masking::MaskingConfig masking;
  /// Keep MSM/MRM targets on negative pairs; by default only positives carry them.
  bool targets_on_negatives = false;
};

/// Masks every sample in place; negatives lose their MSM/MRM targets unless
/// `targets_on_negatives` is set.
void mask_itm_samples(std::vector<data::Sample>& samples, const data::Vocabulary& vocab, const ItmOptions& options,
                      Rng& rng);

/// The first half of `anchors` (rounded down) become positives, the rest
/// negatives pairing the anchor's image with a sampled caption.
std::vector<data::Sample> make_itm_batch(const data::Corpus& corpus, const HardNegativeTable* table,
                                         std::span<const std::size_t> anchors, const ItmOptions& options, Rng& rng);

}  // namespace ibt::negatives
