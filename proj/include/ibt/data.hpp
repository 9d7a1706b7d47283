#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ibt/tensor.hpp"

namespace ibt::data {

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  [[nodiscard]] double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const BBox&) const = default;
};

struct ObjectRegion {
  std::vector<Real> feature;
  BBox box;
  int label = 0;
  bool operator==(const ObjectRegion&) const = default;
};

struct ImageTextPair {
  std::int64_t image_id = 0;
  std::int64_t caption_id = 0;
  std::vector<int> tokens;  // [CLS] ... [SEP]
  int width = 0;
  int height = 0;
  std::vector<ObjectRegion> objects;
};

struct Vocabulary {
  int size = 0;
  int cls_id = 1;
  int sep_id = 2;
  int mask_id = 3;
  int pad_id = 0;
  std::map<int, std::string> names;

  [[nodiscard]] bool is_special(int id) const {
    return id == cls_id || id == sep_id || id == mask_id || id == pad_id;
  }
  /// Ids eligible as random replacement tokens.
  [[nodiscard]] std::vector<int> content_ids() const;
};

/// Image-text pairs plus lookup indices. Immutable after construction.
class Corpus {
 public:
  Corpus() = default;
  /// Validates every record; throws std::invalid_argument naming the
  /// offending record.
  Corpus(Vocabulary vocab, std::vector<ImageTextPair> pairs);

  [[nodiscard]] const Vocabulary& vocab() const { return vocab_; }
  [[nodiscard]] const std::vector<ImageTextPair>& pairs() const { return pairs_; }
  [[nodiscard]] std::size_t size() const { return pairs_.size(); }
  [[nodiscard]] bool empty() const { return pairs_.empty(); }
  [[nodiscard]] std::size_t feature_dim() const { return feature_dim_; }

  /// Distinct image ids in order of first appearance.
  [[nodiscard]] const std::vector<std::int64_t>& image_ids() const { return image_ids_; }
  /// Indices into pairs() of the image's captions, in file order.
  [[nodiscard]] const std::vector<std::size_t>& pairs_of_image(std::int64_t image_id) const;
  [[nodiscard]] std::size_t index_of_caption(std::int64_t caption_id) const;
  /// First record of the image; carries its objects.
  [[nodiscard]] const ImageTextPair& image_record(std::int64_t image_id) const;
  [[nodiscard]] int max_label() const { return max_label_; }

  /// Splits by image: the first `first_images` images go left.
  [[nodiscard]] std::pair<Corpus, Corpus> split_images(std::size_t first_images) const;

 private:
  Vocabulary vocab_;
  std::vector<ImageTextPair> pairs_;
  std::vector<std::int64_t> image_ids_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> by_image_;
  std::unordered_map<std::int64_t, std::size_t> by_caption_;
  std::size_t feature_dim_ = 0;
  int max_label_ = -1;
};

/// Throws std::invalid_argument when the record breaks an invariant.
void validate_pair(const ImageTextPair& pair, const Vocabulary& vocab);

// Corpus JSONL, one pair per line, keys in this order:
// {"image_id","caption_id","tokens","width","height","objects":[{"feat","bbox","label"}]}
// Reals are printed with 9 significant digits.
std::string format_real(double value);
/// Rounds to the value that format_real would print.
double canonical_real(double value);

void write_pair(std::ostream& out, const ImageTextPair& pair);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Parses and validates; errors carry the 1-based line number.
Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<ImageTextPair> read_pairs(std::istream& in, const Vocabulary& vocab);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t num_images = 200;
  std::size_t captions_per_image = 1;
  int num_classes = 16;
  std::size_t feature_dim = 24;
  double noise_std = 0.1;
  int min_objects = 2;
  int max_objects = 6;
  int max_fillers = 2;
  int width = 640;
  int height = 480;
};

/// Synthetic corpus with a planted cross-modal correspondence: object
/// features are one-hot class codes plus Gaussian noise and each caption
/// lists the class words of its image's objects in random order, with a few
/// filler words mixed in.
Corpus synth_corpus(const SynthOptions& options);

/// Vocabulary used by synth_corpus: specials, one word per class, fillers.
Vocabulary synth_vocabulary(int num_classes);
/// Token id of the class word for `label` in a synth vocabulary.
int synth_class_token(int label);

// ---------------------------------------------------------------------------
// Batching

/// Model input for one image-text pair after optional masking.
struct Sample {
  std::vector<int> tokens;
  std::vector<Real> features;  // objects x feature_dim, row-major
  std::vector<BBox> boxes;
  std::vector<int> labels;  // object class per object
  int width = 0;
  int height = 0;
  std::vector<int> msm_targets;  // per token; empty means nothing to predict
  std::vector<int> mrm_targets;  // per object; empty means nothing to predict
  Real itm_label = 1;

  [[nodiscard]] std::size_t object_count() const { return boxes.size(); }
};

Sample to_sample(const ImageTextPair& pair);
/// Caption of one record with the image of another.
Sample combine(const ImageTextPair& image_source, const ImageTextPair& caption_source);

/// Position map of a padded batch. Per sample the fused sequence is the
/// image span [0, image_len) = o_[CLS], objects, padding, followed by the
/// text span [image_len, image_len + text_len) = [CLS], tokens, [SEP], padding.
struct SequenceLayout {
  std::size_t batch = 0;
  std::size_t image_len = 0;
  std::size_t text_len = 0;
  std::vector<std::uint8_t> image_valid;  // batch x image_len
  std::vector<std::uint8_t> text_valid;   // batch x text_len

  [[nodiscard]] std::size_t length() const { return image_len + text_len; }
  [[nodiscard]] std::size_t text_begin() const { return image_len; }
  [[nodiscard]] std::size_t max_objects() const { return image_len - 1; }
  /// Validity of every fused position, batch x length().
  [[nodiscard]] std::vector<std::uint8_t> fused_valid() const;
};

inline constexpr std::size_t kGeometryDim = 5;

struct Batch {
  SequenceLayout layout;
  std::size_t feature_dim = 0;
  std::vector<int> token_ids;                // batch x text_len, pad_id at padding
  std::vector<Real> object_features;         // batch x max_objects x feature_dim
  std::vector<std::size_t> object_counts;    // batch
  std::vector<Real> geometry;                // batch x image_len x 5; row 0 is o_[CLS]
  std::vector<int> msm_targets;              // batch x text_len
  std::vector<int> mrm_targets;              // batch x max_objects
  std::vector<Real> itm_labels;              // batch
};

/// Box geometry vector (x1/W, y1/H, x2/W, y2/H, area / image area).
std::array<Real, kGeometryDim> box_geometry(const BBox& box, int width, int height);

/// Pads to the batch maxima. Samples longer than the limits are rejected;
/// nothing is truncated. `max_text_len` counts [CLS] and [SEP].
Batch make_batch(std::span<const Sample> samples, std::size_t max_text_len, std::size_t max_objects, int pad_id);

}  // namespace ibt::data
