#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "ibt/data.hpp"
#include "ibt/model.hpp"

namespace ibt::eval {

/// Captions x images ITM logits, row-major, with the gold column per caption.
struct ScoreMatrix {
  std::size_t captions = 0;
  std::size_t images = 0;
  std::vector<Real> scores;
  std::vector<std::size_t> gold;

  [[nodiscard]] Real at(std::size_t caption, std::size_t image) const { return scores[caption * images + image]; }
  /// Throws std::invalid_argument when not rectangular or a gold index is out of range.
  void validate() const;
};

/// Scores every (caption, image) pair without masking. `captions` index
/// corpus.pairs(), `images` index corpus.image_ids(). Parallel over caption
/// rows; the result does not depend on the thread count.
ScoreMatrix score_all(const model::InterBert& net, const data::Corpus& corpus, std::span<const std::size_t> captions,
                      std::span<const std::size_t> images);

/// 1-based rank of the gold image: one plus the images scoring higher, plus
/// equal-scoring images with a lower index.
std::size_t gold_rank(const ScoreMatrix& m, std::size_t caption);

/// Fraction of captions whose gold image ranks within the top k.
double recall_at_k(const ScoreMatrix& m, std::size_t k);

struct RetrievalMetrics {
  double r1 = 0, r5 = 0, r10 = 0;
  std::size_t pools = 0;
  std::size_t pool_size = 0;
  std::size_t captions = 0;
};

/// Caption-to-image retrieval over consecutive pools of `pool_size` images
/// (corpus image order); a trailing partial pool is dropped. A corpus smaller
/// than one pool is a single pool. Recalls are averaged over all captions.
RetrievalMetrics zero_shot_eval(const model::InterBert& net, const data::Corpus& corpus, std::size_t pool_size = 50);

/// Each pair scored once as given and once against a random other caption;
/// accuracy of the sign of the ITM logit. No masking.
double heldout_itm_accuracy(const model::InterBert& net, const data::Corpus& corpus, std::uint64_t seed);

/// Per caption the true image and three distractors; correct when the true
/// image has the strictly largest logit.
double multiple_choice_accuracy(const model::InterBert& net, const data::Corpus& corpus, std::uint64_t seed);

// ---------------------------------------------------------------- item retrieval

enum class EmbeddingKind { kProduct, kImage, kText };

EmbeddingKind parse_embedding_kind(const std::string& name);

/// Row-major count x dim float matrix; item id = row index.
struct Embeddings {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  [[nodiscard]] std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  bool operator==(const Embeddings&) const = default;
};

/// One row per corpus pair, unmasked. kProduct is pooled_image * pooled_text,
/// the input of the ITM head.
Embeddings item_embeddings(const model::InterBert& net, const data::Corpus& corpus,
                           EmbeddingKind kind = EmbeddingKind::kProduct);

// Binary: u32 count, u32 dim, count * dim f32, all little-endian.
void write_embeddings(const Embeddings& e, std::ostream& out);
Embeddings read_embeddings(std::istream& in);
void save_embeddings(const Embeddings& e, const std::filesystem::path& path);
Embeddings load_embeddings(const std::filesystem::path& path);

struct Neighbor {
  std::size_t id = 0;
  double similarity = 0;
};

/// Top k items by cosine similarity to the trigger, trigger excluded, ties by
/// ascending id. Throws std::out_of_range unless 0 < k < count.
std::vector<Neighbor> knn_items(const Embeddings& items, std::size_t trigger, std::size_t k);

}  // namespace ibt::eval
