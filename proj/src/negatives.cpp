#include "ibt/negatives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ibt/ops.hpp"
#include "json.hpp"

namespace ibt::negatives {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string caption_text(std::span<const int> tokens, const data::Vocabulary& vocab) {
  std::string text;
  for (int t : tokens) {
    if (vocab.is_special(t)) continue;
    if (!text.empty()) text.push_back(' ');
    auto it = vocab.names.find(t);
    text += it != vocab.names.end() ? it->second : "tok" + std::to_string(t);
  }
  return text;
}

namespace {

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace

TfIdfIndex TfIdfIndex::build(const data::Corpus& corpus) {
  std::vector<std::string> texts;
  std::vector<std::int64_t> captions, images;
  for (const auto& p : corpus.pairs()) {
    texts.push_back(caption_text(p.tokens, corpus.vocab()));
    captions.push_back(p.caption_id);
    images.push_back(p.image_id);
  }
  return build(texts, std::move(captions), std::move(images));
}

TfIdfIndex TfIdfIndex::build(const std::vector<std::string>& texts, std::vector<std::int64_t> caption_ids,
                             std::vector<std::int64_t> image_ids) {
  if (texts.size() != caption_ids.size() || texts.size() != image_ids.size()) {
    throw std::invalid_argument("tfidf: texts and ids differ in length");
  }
  if (texts.size() < 2) throw std::invalid_argument("tfidf: need at least two captions");
  TfIdfIndex index;
  index.caption_ids_ = std::move(caption_ids);
  index.image_ids_ = std::move(image_ids);
  const std::size_t n = texts.size();

  // Term ids follow first appearance so the index is a pure function of the
  // input order.
  std::unordered_map<std::string, std::uint32_t> term_of;
  std::vector<std::map<std::uint32_t, std::size_t>> counts(n);
  std::vector<std::size_t> lengths(n);
  for (std::size_t d = 0; d < n; ++d) {
    auto words = tokenize(texts[d]);
    lengths[d] = words.size();
    if (words.empty()) index.skipped_.push_back(index.caption_ids_[d]);
    for (auto& w : words) {
      auto [it, fresh] = term_of.emplace(w, static_cast<std::uint32_t>(index.terms_.size()));
      if (fresh) {
        index.terms_.push_back(w);
        index.df_.push_back(0);
      }
      if (counts[d][it->second]++ == 0) ++index.df_[it->second];
    }
  }

  index.vectors_.resize(n);
#ifdef IBT_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t sd = 0; sd < static_cast<std::ptrdiff_t>(n); ++sd) {
    const auto d = static_cast<std::size_t>(sd);
    auto& vec = index.vectors_[d];
    std::vector<double> squares;
    for (const auto& [term, count] : counts[d]) {
      const double tf = static_cast<double>(count) / static_cast<double>(lengths[d]);
      const double w = tf * index.idf(term);
      vec.push_back({term, w});
      squares.push_back(w * w);
    }
    const double norm = std::sqrt(sorted_sum(squares));
    if (norm > 0)
      for (auto& tw : vec) tw.weight /= norm;
  }

  for (std::size_t d = 0; d < n; ++d) {
    auto [it, fresh] = index.docs_of_image_.try_emplace(index.image_ids_[d]);
    if (fresh) index.image_order_.push_back(index.image_ids_[d]);
    it->second.push_back(d);
  }
  return index;
}

double TfIdfIndex::idf(std::uint32_t term) const {
  return std::log(static_cast<double>(vectors_.size()) / static_cast<double>(df_[term])) + 1.0;
}

const std::vector<std::size_t>& TfIdfIndex::documents_of_image(std::int64_t image_id) const {
  auto it = docs_of_image_.find(image_id);
  if (it == docs_of_image_.end()) throw std::out_of_range("tfidf: no image " + std::to_string(image_id));
  return it->second;
}

double TfIdfIndex::similarity(std::size_t a, std::size_t b) const {
  const auto& va = vectors_[a];
  const auto& vb = vectors_[b];
  std::vector<double> products;
  std::size_t i = 0, j = 0;
  while (i < va.size() && j < vb.size()) {
    if (va[i].term < vb[j].term) {
      ++i;
    } else if (vb[j].term < va[i].term) {
      ++j;
    } else {
      products.push_back(va[i].weight * vb[j].weight);
      ++i;
      ++j;
    }
  }
  return sorted_sum(products);
}

std::vector<HardNegative> mine_hard_negatives(const TfIdfIndex& index, std::int64_t image_id,
                                              const MiningOptions& options) {
  const auto& own = index.documents_of_image(image_id);
  const std::size_t query = own.front();
  std::vector<HardNegative> candidates;
  for (std::size_t d = 0; d < index.size(); ++d) {
    if (index.image_id(d) == image_id || index.vector(d).empty()) continue;
    const double sim = index.similarity(query, d);
    if (sim < options.max_similarity) candidates.push_back({index.caption_id(d), sim});
  }
  auto better = [](const HardNegative& a, const HardNegative& b) {
    return a.sim != b.sim ? a.sim > b.sim : a.caption_id < b.caption_id;
  };
  const std::size_t k = std::min(options.top_k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(), better);
  candidates.resize(k);
  return candidates;
}

HardNegativeTable HardNegativeTable::build(const TfIdfIndex& index, const MiningOptions& options) {
  const auto& images = index.image_order();
  std::vector<std::vector<HardNegative>> rows(images.size());
#ifdef IBT_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(images.size()); ++i) {
    rows[static_cast<std::size_t>(i)] = mine_hard_negatives(index, images[static_cast<std::size_t>(i)], options);
  }
  HardNegativeTable table;
  for (std::size_t i = 0; i < images.size(); ++i) table.rows_[images[i]] = std::move(rows[i]);
  return table;
}

const std::vector<HardNegative>& HardNegativeTable::row(std::int64_t image_id) const {
  static const std::vector<HardNegative> empty;
  auto it = rows_.find(image_id);
  return it == rows_.end() ? empty : it->second;
}

void write_table(const HardNegativeTable& table, std::ostream& out) {
  for (const auto& [image, row] : table.rows()) {
    nlohmann::ordered_json j;
    j["image_id"] = image;
    j["negatives"] = nlohmann::ordered_json::array();
    for (const auto& h : row) {
      nlohmann::ordered_json e;
      e["caption_id"] = h.caption_id;
      e["sim"] = h.sim;
      j["negatives"].push_back(e);
    }
    out << j.dump() << '\n';
  }
}

HardNegativeTable read_table(std::istream& in) {
  HardNegativeTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      std::vector<HardNegative> row;
      for (const auto& e : j.at("negatives")) {
        row.push_back({e.at("caption_id").get<std::int64_t>(), e.at("sim").get<double>()});
      }
      table.set_row(j.at("image_id").get<std::int64_t>(), std::move(row));
    } catch (const std::exception& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

void save_table(const HardNegativeTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_table(table, out);
}

HardNegativeTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open negatives table " + path.string());
  return read_table(in);
}

NegativeDraw sample_negative(const data::Corpus& corpus, std::size_t pair_index, const HardNegativeTable* table,
                             double hard_prob, Rng& rng) {
  if (corpus.image_ids().size() < 2) throw std::invalid_argument("negative sampling needs at least two images");
  const auto image = corpus.pairs()[pair_index].image_id;
  if (bernoulli(rng, hard_prob) && table) {
    const auto& row = table->row(image);
    if (!row.empty()) {
      const auto& pick = row[uniform_int<std::size_t>(rng, 0, row.size() - 1)];
      return {corpus.index_of_caption(pick.caption_id), true};
    }
  }
  for (;;) {
    const auto i = uniform_int<std::size_t>(rng, 0, corpus.size() - 1);
    if (corpus.pairs()[i].image_id != image) return {i, false};
  }
}

void mask_itm_samples(std::vector<data::Sample>& samples, const data::Vocabulary& vocab, const ItmOptions& options,
                      Rng& rng) {
  for (auto& s : samples) {
    const auto plan = masking::sample_plan(s, vocab, options.masking, rng);
    s = masking::apply_masks(s, plan, vocab, rng);
    if (s.itm_label == 0 && !options.targets_on_negatives) {
      std::fill(s.msm_targets.begin(), s.msm_targets.end(), kIgnoreTarget);
      std::fill(s.mrm_targets.begin(), s.mrm_targets.end(), kIgnoreTarget);
    }
  }
}

std::vector<data::Sample> make_itm_batch(const data::Corpus& corpus, const HardNegativeTable* table,
                                         std::span<const std::size_t> anchors, const ItmOptions& options, Rng& rng) {
  std::vector<data::Sample> batch;
  const std::size_t positives = anchors.size() / 2;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto& pair = corpus.pairs()[anchors[i]];
    data::Sample s;
    if (i < positives) {
      s = data::to_sample(pair);
      s.itm_label = 1;
    } else {
      const auto neg = sample_negative(corpus, anchors[i], table, options.hard_prob, rng);
      s = data::combine(pair, corpus.pairs()[neg.pair_index]);
      s.itm_label = 0;
    }
    batch.push_back(std::move(s));
  }
  if (options.mask) mask_itm_samples(batch, corpus.vocab(), options, rng);
  return batch;
}

}  // namespace ibt::negatives
