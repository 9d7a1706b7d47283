#include "ibt/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>
#include <stdexcept>

#include "ibt/negatives.hpp"
#include "ibt/ops.hpp"
#include "ibt/random.hpp"
#include "ibt/training.hpp"

namespace ibt::eval {

namespace {

constexpr std::size_t kChunk = 32;

data::Batch batch_of(const model::InterBert& net, const data::Corpus& corpus, std::span<const data::Sample> s) {
  return data::make_batch(s, net.config().max_text_len, net.config().max_objects, corpus.vocab().pad_id);
}

std::vector<Real> itm_scores(const model::InterBert& net, const data::Batch& batch) {
  NoGradGuard guard;
  const auto out = net.forward(batch);
  const auto logits = net.itm_logits(out.pooled_image, out.pooled_text);
  return {logits.values().begin(), logits.values().end()};
}

}  // namespace

void ScoreMatrix::validate() const {
  if (scores.size() != captions * images) throw std::invalid_argument("score matrix is not rectangular");
  if (gold.size() != captions) throw std::invalid_argument("score matrix needs one gold index per caption");
  for (auto g : gold)
    if (g >= images) throw std::invalid_argument("gold index " + std::to_string(g) + " out of range");
}

ScoreMatrix score_all(const model::InterBert& net, const data::Corpus& corpus, std::span<const std::size_t> captions,
                      std::span<const std::size_t> images) {
  ScoreMatrix m;
  m.captions = captions.size();
  m.images = images.size();
  m.scores.assign(m.captions * m.images, Real{0});
  m.gold.assign(m.captions, m.images);
  std::vector<const data::ImageTextPair*> records;
  for (auto i : images) records.push_back(&corpus.image_record(corpus.image_ids().at(i)));
  for (std::size_t c = 0; c < m.captions; ++c) {
    const auto image_id = corpus.pairs().at(captions[c]).image_id;
    for (std::size_t i = 0; i < m.images; ++i)
      if (corpus.image_ids()[images[i]] == image_id) m.gold[c] = i;
    if (m.gold[c] == m.images) throw std::invalid_argument("caption's image is not in the pool");
  }

  std::exception_ptr error;
#ifdef IBT_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(m.captions); ++sc) {
    const auto c = static_cast<std::size_t>(sc);
    try {
      const auto& caption = corpus.pairs()[captions[c]];
      for (std::size_t begin = 0; begin < m.images; begin += kChunk) {
        const std::size_t end = std::min(m.images, begin + kChunk);
        std::vector<data::Sample> samples;
        for (std::size_t i = begin; i < end; ++i) samples.push_back(data::combine(*records[i], caption));
        const auto s = itm_scores(net, batch_of(net, corpus, samples));
        std::copy(s.begin(), s.end(), m.scores.begin() + static_cast<std::ptrdiff_t>(c * m.images + begin));
      }
    } catch (...) {
#ifdef IBT_HAVE_OPENMP
#pragma omp critical(ibt_score_error)
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return m;
}

std::size_t gold_rank(const ScoreMatrix& m, std::size_t caption) {
  const std::size_t g = m.gold[caption];
  const Real gold = m.at(caption, g);
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < m.images; ++i) {
    const Real s = m.at(caption, i);
    ahead += s > gold || (s == gold && i < g);
  }
  return ahead + 1;
}

double recall_at_k(const ScoreMatrix& m, std::size_t k) {
  m.validate();
  if (k == 0 || k > m.images) throw std::invalid_argument("recall k must be in [1, image count]");
  if (m.captions == 0) return 0;
  std::size_t hits = 0;
  for (std::size_t c = 0; c < m.captions; ++c) hits += gold_rank(m, c) <= k;
  return static_cast<double>(hits) / static_cast<double>(m.captions);
}

RetrievalMetrics zero_shot_eval(const model::InterBert& net, const data::Corpus& corpus, std::size_t pool_size) {
  const std::size_t n = corpus.image_ids().size();
  if (pool_size < 10) throw std::invalid_argument("pool_size must be at least 10 for R@10");
  RetrievalMetrics out;
  out.pool_size = std::min(pool_size, n);
  if (out.pool_size < 10) throw std::invalid_argument("retrieval needs at least 10 images");
  out.pools = n / out.pool_size;
  std::size_t h1 = 0, h5 = 0, h10 = 0;
  for (std::size_t p = 0; p < out.pools; ++p) {
    std::vector<std::size_t> images(out.pool_size), captions;
    for (std::size_t i = 0; i < out.pool_size; ++i) {
      images[i] = p * out.pool_size + i;
      const auto& own = corpus.pairs_of_image(corpus.image_ids()[images[i]]);
      captions.insert(captions.end(), own.begin(), own.end());
    }
    const auto m = score_all(net, corpus, captions, images);
    for (std::size_t c = 0; c < m.captions; ++c) {
      const auto r = gold_rank(m, c);
      h1 += r <= 1;
      h5 += r <= 5;
      h10 += r <= 10;
    }
    out.captions += m.captions;
  }
  const auto total = static_cast<double>(out.captions);
  out.r1 = static_cast<double>(h1) / total;
  out.r5 = static_cast<double>(h5) / total;
  out.r10 = static_cast<double>(h10) / total;
  return out;
}

double heldout_itm_accuracy(const model::InterBert& net, const data::Corpus& corpus, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::Sample> samples;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto pos = data::to_sample(corpus.pairs()[i]);
    pos.itm_label = 1;
    const auto neg_index = negatives::sample_negative(corpus, i, nullptr, 0.0, rng).pair_index;
    auto neg = data::combine(corpus.pairs()[i], corpus.pairs()[neg_index]);
    neg.itm_label = 0;
    samples.push_back(std::move(pos));
    samples.push_back(std::move(neg));
  }
  std::size_t right = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::span<const data::Sample> chunk(samples.data() + begin, std::min(kChunk, samples.size() - begin));
    const auto s = itm_scores(net, batch_of(net, corpus, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) right += (s[i] > 0) == (chunk[i].itm_label > Real{0.5});
  }
  return samples.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(samples.size());
}

double multiple_choice_accuracy(const model::InterBert& net, const data::Corpus& corpus, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t per_batch = kChunk / training::kChoices;
  double weighted = 0;
  for (std::size_t begin = 0; begin < corpus.size(); begin += per_batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(corpus.size(), begin + per_batch); ++i) idx.push_back(i);
    const auto batch = training::choice_batch(corpus, idx, net.config(), rng);
    double acc = 0;
    {
      NoGradGuard guard;
      (void)training::choice_loss(net, batch, &acc);
    }
    weighted += acc * static_cast<double>(idx.size());
  }
  return corpus.size() ? weighted / static_cast<double>(corpus.size()) : 0.0;
}

EmbeddingKind parse_embedding_kind(const std::string& name) {
  if (name == "product") return EmbeddingKind::kProduct;
  if (name == "image") return EmbeddingKind::kImage;
  if (name == "text") return EmbeddingKind::kText;
  throw std::invalid_argument("unknown embedding kind '" + name + "' (product, image, text)");
}

Embeddings item_embeddings(const model::InterBert& net, const data::Corpus& corpus, EmbeddingKind kind) {
  Embeddings e;
  e.count = corpus.size();
  e.dim = net.config().hidden_size;
  e.values.reserve(e.count * e.dim);
  NoGradGuard guard;
  for (std::size_t begin = 0; begin < corpus.size(); begin += kChunk) {
    std::vector<data::Sample> samples;
    for (std::size_t i = begin; i < std::min(corpus.size(), begin + kChunk); ++i)
      samples.push_back(data::to_sample(corpus.pairs()[i]));
    const auto out = net.forward(batch_of(net, corpus, samples));
    const Tensor rows = kind == EmbeddingKind::kProduct ? mul(out.pooled_image, out.pooled_text)
                        : kind == EmbeddingKind::kImage ? out.pooled_image
                                                        : out.pooled_text;
    for (Real v : rows.values()) e.values.push_back(static_cast<float>(v));
  }
  return e;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("embeddings file truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_embeddings(const Embeddings& e, std::ostream& out) {
  if (e.values.size() != e.count * e.dim) throw std::invalid_argument("embeddings size mismatch");
  put_u32(out, static_cast<std::uint32_t>(e.count));
  put_u32(out, static_cast<std::uint32_t>(e.dim));
  for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

Embeddings read_embeddings(std::istream& in) {
  Embeddings e;
  e.count = get_u32(in);
  e.dim = get_u32(in);
  if (e.dim == 0) throw std::runtime_error("embeddings file has dim 0");
  e.values.resize(e.count * e.dim);
  for (auto& v : e.values) v = std::bit_cast<float>(get_u32(in));
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in embeddings file");
  return e;
}

void save_embeddings(const Embeddings& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_embeddings(e, out);
}

Embeddings load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embeddings " + path.string());
  return read_embeddings(in);
}

std::vector<Neighbor> knn_items(const Embeddings& items, std::size_t trigger, std::size_t k) {
  if (trigger >= items.count) throw std::out_of_range("trigger id " + std::to_string(trigger) + " not in embeddings");
  if (k == 0 || k >= items.count) throw std::out_of_range("k must be in [1, item count - 1]");
  auto norm = [&](std::size_t i) {
    double s = 0;
    for (float v : items.row(i)) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  };
  const auto t = items.row(trigger);
  const double nt = norm(trigger);
  std::vector<Neighbor> all;
  all.reserve(items.count - 1);
  for (std::size_t i = 0; i < items.count; ++i) {
    if (i == trigger) continue;
    const auto r = items.row(i);
    double dot = 0;
    for (std::size_t d = 0; d < items.dim; ++d) dot += static_cast<double>(t[d]) * r[d];
    const double denom = nt * norm(i);
    all.push_back({i, denom > 0 ? dot / denom : 0.0});
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
                    });
  all.resize(k);
  return all;
}

}  // namespace ibt::eval
