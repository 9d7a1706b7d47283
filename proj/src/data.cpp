#include "ibt/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ibt/ops.hpp"
#include "ibt/random.hpp"
#include "json.hpp"

namespace ibt::data {

using nlohmann::json;

std::vector<int> Vocabulary::content_ids() const {
  std::vector<int> ids;
  for (int id = 0; id < size; ++id)
    if (!is_special(id)) ids.push_back(id);
  return ids;
}

void validate_pair(const ImageTextPair& pair, const Vocabulary& vocab) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("caption " + std::to_string(pair.caption_id) + ": " + what);
  };
  if (pair.tokens.size() < 3) fail("needs [CLS], at least one token and [SEP]");
  if (pair.tokens.front() != vocab.cls_id) fail("first token is not [CLS]");
  if (pair.tokens.back() != vocab.sep_id) fail("last token is not [SEP]");
  for (int t : pair.tokens)
    if (t < 0 || t >= vocab.size) fail("token id " + std::to_string(t) + " outside vocabulary");
  if (pair.width <= 0 || pair.height <= 0) fail("image size must be positive");
  if (pair.objects.empty()) fail("image has no objects");
  const std::size_t dim = pair.objects.front().feature.size();
  if (dim == 0) fail("empty object feature");
  for (const auto& obj : pair.objects) {
    const auto& b = obj.box;
    if (obj.feature.size() != dim) fail("object feature sizes differ");
    if (!(b.x2 > b.x1 && b.y2 > b.y1)) fail("degenerate bbox");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > pair.width || b.y2 > pair.height) fail("bbox outside image bounds");
    if (obj.label < 0) fail("negative object label");
  }
}

Corpus::Corpus(Vocabulary vocab, std::vector<ImageTextPair> pairs) : vocab_(std::move(vocab)), pairs_(std::move(pairs)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    const auto& p = pairs_[i];
    validate_pair(p, vocab_);
    if (!by_caption_.emplace(p.caption_id, i).second) {
      throw std::invalid_argument("duplicate caption_id " + std::to_string(p.caption_id));
    }
    const std::size_t dim = p.objects.front().feature.size();
    if (feature_dim_ == 0) feature_dim_ = dim;
    if (dim != feature_dim_) throw std::invalid_argument("caption " + std::to_string(p.caption_id) + ": feature dim differs from corpus");
    for (const auto& o : p.objects) max_label_ = std::max(max_label_, o.label);
    auto [it, fresh] = by_image_.try_emplace(p.image_id);
    if (fresh) {
      image_ids_.push_back(p.image_id);
    } else {
      const auto& first = pairs_[it->second.front()];
      if (first.width != p.width || first.height != p.height || first.objects != p.objects) {
        throw std::invalid_argument("caption " + std::to_string(p.caption_id) + ": image " +
                                    std::to_string(p.image_id) + " differs from its earlier record");
      }
    }
    it->second.push_back(i);
  }
}

const std::vector<std::size_t>& Corpus::pairs_of_image(std::int64_t image_id) const {
  auto it = by_image_.find(image_id);
  if (it == by_image_.end()) throw std::out_of_range("no image " + std::to_string(image_id));
  return it->second;
}

std::size_t Corpus::index_of_caption(std::int64_t caption_id) const {
  auto it = by_caption_.find(caption_id);
  if (it == by_caption_.end()) throw std::out_of_range("no caption " + std::to_string(caption_id));
  return it->second;
}

const ImageTextPair& Corpus::image_record(std::int64_t image_id) const {
  return pairs_[pairs_of_image(image_id).front()];
}

std::pair<Corpus, Corpus> Corpus::split_images(std::size_t first_images) const {
  std::vector<ImageTextPair> left, right;
  std::unordered_map<std::int64_t, bool> goes_left;
  for (std::size_t i = 0; i < image_ids_.size(); ++i) goes_left[image_ids_[i]] = i < first_images;
  for (const auto& p : pairs_) (goes_left[p.image_id] ? left : right).push_back(p);
  return {Corpus(vocab_, std::move(left)), Corpus(vocab_, std::move(right))};
}

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

double canonical_real(double value) { return std::strtod(format_real(value).c_str(), nullptr); }

void write_pair(std::ostream& out, const ImageTextPair& p) {
  out << "{\"image_id\":" << p.image_id << ",\"caption_id\":" << p.caption_id << ",\"tokens\":[";
  for (std::size_t i = 0; i < p.tokens.size(); ++i) out << (i ? "," : "") << p.tokens[i];
  out << "],\"width\":" << p.width << ",\"height\":" << p.height << ",\"objects\":[";
  for (std::size_t o = 0; o < p.objects.size(); ++o) {
    const auto& obj = p.objects[o];
    out << (o ? "," : "") << "{\"feat\":[";
    for (std::size_t i = 0; i < obj.feature.size(); ++i) out << (i ? "," : "") << format_real(obj.feature[i]);
    out << "],\"bbox\":[" << format_real(obj.box.x1) << ',' << format_real(obj.box.y1) << ','
        << format_real(obj.box.x2) << ',' << format_real(obj.box.y2) << "],\"label\":" << obj.label << '}';
  }
  out << "]}\n";
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : corpus.pairs()) write_pair(out, p);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

ImageTextPair parse_pair(const json& j) {
  ImageTextPair p;
  p.image_id = j.at("image_id").get<std::int64_t>();
  p.caption_id = j.at("caption_id").get<std::int64_t>();
  p.tokens = j.at("tokens").get<std::vector<int>>();
  p.width = j.at("width").get<int>();
  p.height = j.at("height").get<int>();
  for (const auto& o : j.at("objects")) {
    ObjectRegion obj;
    for (const auto& v : o.at("feat")) obj.feature.push_back(static_cast<Real>(v.get<double>()));
    const auto& b = o.at("bbox");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox must have 4 numbers");
    obj.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    obj.label = o.at("label").get<int>();
    p.objects.push_back(std::move(obj));
  }
  return p;
}

}  // namespace

std::vector<ImageTextPair> read_pairs(std::istream& in, const Vocabulary& vocab) {
  std::vector<ImageTextPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto p = parse_pair(json::parse(line));
      validate_pair(p, vocab);
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  return Corpus(vocab, read_pairs(in, vocab));
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["size"] = vocab.size;
  j["cls_id"] = vocab.cls_id;
  j["sep_id"] = vocab.sep_id;
  j["mask_id"] = vocab.mask_id;
  j["pad_id"] = vocab.pad_id;
  if (!vocab.names.empty()) {
    nlohmann::ordered_json names = nlohmann::ordered_json::object();
    for (const auto& [id, name] : vocab.names) names[std::to_string(id)] = name;
    j["names"] = names;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("vocabulary " + path.string() + ": " + e.what());
  }
  Vocabulary v;
  v.size = j.at("size").get<int>();
  v.cls_id = j.at("cls_id").get<int>();
  v.sep_id = j.at("sep_id").get<int>();
  v.mask_id = j.at("mask_id").get<int>();
  v.pad_id = j.at("pad_id").get<int>();
  if (j.contains("names")) {
    for (const auto& [key, name] : j.at("names").items()) v.names[std::stoi(key)] = name.get<std::string>();
  }
  for (int id : {v.cls_id, v.sep_id, v.mask_id, v.pad_id})
    if (id < 0 || id >= v.size) throw std::invalid_argument("vocabulary: special id outside size");
  return v;
}

namespace {

constexpr int kFirstClassToken = 4;

const std::vector<std::string>& class_words() {
  static const std::vector<std::string> words = {
      "person", "dog",    "cat",   "car",    "tree",   "bicycle", "horse", "boat",  "bird",    "chair",
      "table",  "bottle", "cup",   "bench",  "kite",   "train",   "truck", "sheep", "cow",     "clock",
      "vase",   "lamp",   "phone", "laptop", "book",   "bowl",    "pizza", "cake",  "bag",     "shoe",
      "hat",    "ball",   "sign",  "bus",    "window", "door",    "plant", "fence", "umbrella", "bridge"};
  return words;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {"a", "the", "photo", "of", "with", "and", "near", "showing"};
  return words;
}

}  // namespace

int synth_class_token(int label) { return kFirstClassToken + label; }

Vocabulary synth_vocabulary(int num_classes) {
  Vocabulary v;
  v.pad_id = 0;
  v.cls_id = 1;
  v.sep_id = 2;
  v.mask_id = 3;
  v.names = {{0, "[PAD]"}, {1, "[CLS]"}, {2, "[SEP]"}, {3, "[MASK]"}};
  const auto& words = class_words();
  for (int c = 0; c < num_classes; ++c) {
    v.names[synth_class_token(c)] =
        static_cast<std::size_t>(c) < words.size() ? words[static_cast<std::size_t>(c)] : "object" + std::to_string(c);
  }
  int next = kFirstClassToken + num_classes;
  for (const auto& f : filler_words()) v.names[next++] = f;
  v.size = next;
  return v;
}

Corpus synth_corpus(const SynthOptions& o) {
  if (o.num_classes < 1) throw std::invalid_argument("synth: need at least one class");
  if (o.feature_dim < static_cast<std::size_t>(o.num_classes)) {
    throw std::invalid_argument("synth: feature_dim must be at least num_classes");
  }
  if (o.min_objects < 1 || o.max_objects < o.min_objects) throw std::invalid_argument("synth: bad object range");
  Vocabulary vocab = synth_vocabulary(o.num_classes);
  const int first_filler = kFirstClassToken + o.num_classes;
  const int num_fillers = static_cast<int>(filler_words().size());

  Rng rng(o.seed);
  std::normal_distribution<double> noise(0.0, o.noise_std > 0 ? o.noise_std : 1.0);
  std::vector<ImageTextPair> pairs;
  for (std::size_t img = 0; img < o.num_images; ++img) {
    ImageTextPair base;
    base.image_id = static_cast<std::int64_t>(img);
    base.width = o.width;
    base.height = o.height;
    const int m = uniform_int(rng, o.min_objects, o.max_objects);
    for (int k = 0; k < m; ++k) {
      ObjectRegion obj;
      obj.label = uniform_int(rng, 0, o.num_classes - 1);
      obj.feature.assign(o.feature_dim, Real{0});
      obj.feature[static_cast<std::size_t>(obj.label)] = 1;
      if (o.noise_std > 0)
        for (auto& f : obj.feature) f = static_cast<Real>(canonical_real(f + noise(rng)));
      const int bw = uniform_int(rng, o.width / 8, o.width / 2);
      const int bh = uniform_int(rng, o.height / 8, o.height / 2);
      const int x1 = uniform_int(rng, 0, o.width - bw);
      const int y1 = uniform_int(rng, 0, o.height - bh);
      obj.box = {double(x1), double(y1), double(x1 + bw), double(y1 + bh)};
      base.objects.push_back(std::move(obj));
    }
    for (std::size_t c = 0; c < o.captions_per_image; ++c) {
      ImageTextPair pair = base;
      pair.caption_id = static_cast<std::int64_t>(img * o.captions_per_image + c);
      std::vector<int> words;
      for (const auto& obj : base.objects) words.push_back(synth_class_token(obj.label));
      std::shuffle(words.begin(), words.end(), rng);
      const int fillers = o.max_fillers > 0 ? uniform_int(rng, 0, o.max_fillers) : 0;
      for (int f = 0; f < fillers; ++f) {
        const auto at = uniform_int<std::size_t>(rng, 0, words.size());
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), first_filler + uniform_int(rng, 0, num_fillers - 1));
      }
      pair.tokens.push_back(vocab.cls_id);
      pair.tokens.insert(pair.tokens.end(), words.begin(), words.end());
      pair.tokens.push_back(vocab.sep_id);
      pairs.push_back(std::move(pair));
    }
  }
  return Corpus(std::move(vocab), std::move(pairs));
}

Sample to_sample(const ImageTextPair& pair) { return combine(pair, pair); }

Sample combine(const ImageTextPair& image_source, const ImageTextPair& caption_source) {
  Sample s;
  s.tokens = caption_source.tokens;
  s.width = image_source.width;
  s.height = image_source.height;
  for (const auto& obj : image_source.objects) {
    s.features.insert(s.features.end(), obj.feature.begin(), obj.feature.end());
    s.boxes.push_back(obj.box);
    s.labels.push_back(obj.label);
  }
  return s;
}

std::vector<std::uint8_t> SequenceLayout::fused_valid() const {
  std::vector<std::uint8_t> valid;
  valid.reserve(batch * length());
  for (std::size_t b = 0; b < batch; ++b) {
    valid.insert(valid.end(), image_valid.begin() + static_cast<std::ptrdiff_t>(b * image_len),
                 image_valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * image_len));
    valid.insert(valid.end(), text_valid.begin() + static_cast<std::ptrdiff_t>(b * text_len),
                 text_valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * text_len));
  }
  return valid;
}

std::array<Real, kGeometryDim> box_geometry(const BBox& box, int width, int height) {
  const double w = width, h = height;
  return {static_cast<Real>(box.x1 / w), static_cast<Real>(box.y1 / h), static_cast<Real>(box.x2 / w),
          static_cast<Real>(box.y2 / h), static_cast<Real>(box.area() / (w * h))};
}

Batch make_batch(std::span<const Sample> samples, std::size_t max_text_len, std::size_t max_objects, int pad_id) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::size_t text_len = 0, objects = 0, dim = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.tokens.size() > max_text_len) {
      throw std::invalid_argument("make_batch: sample " + std::to_string(i) + " has " + std::to_string(s.tokens.size()) +
                                  " tokens, limit " + std::to_string(max_text_len));
    }
    if (s.object_count() > max_objects) {
      throw std::invalid_argument("make_batch: sample " + std::to_string(i) + " has " +
                                  std::to_string(s.object_count()) + " objects, limit " + std::to_string(max_objects));
    }
    if (s.object_count() == 0) throw std::invalid_argument("make_batch: sample without objects");
    const std::size_t d = s.features.size() / s.object_count();
    if (d * s.object_count() != s.features.size() || (dim && d != dim)) {
      throw std::invalid_argument("make_batch: inconsistent feature dim");
    }
    dim = d;
    text_len = std::max(text_len, s.tokens.size());
    objects = std::max(objects, s.object_count());
  }

  Batch batch;
  const std::size_t n = samples.size();
  auto& L = batch.layout;
  L.batch = n;
  L.image_len = objects + 1;
  L.text_len = text_len;
  L.image_valid.assign(n * L.image_len, 0);
  L.text_valid.assign(n * text_len, 0);
  batch.feature_dim = dim;
  batch.token_ids.assign(n * text_len, pad_id);
  batch.object_features.assign(n * objects * dim, Real{0});
  batch.object_counts.resize(n);
  batch.geometry.assign(n * L.image_len * kGeometryDim, Real{0});
  batch.msm_targets.assign(n * text_len, kIgnoreTarget);
  batch.mrm_targets.assign(n * objects, kIgnoreTarget);
  batch.itm_labels.resize(n);

  for (std::size_t b = 0; b < n; ++b) {
    const auto& s = samples[b];
    const std::size_t m = s.object_count();
    std::copy(s.tokens.begin(), s.tokens.end(), batch.token_ids.begin() + static_cast<std::ptrdiff_t>(b * text_len));
    std::fill_n(L.text_valid.begin() + static_cast<std::ptrdiff_t>(b * text_len), s.tokens.size(), 1);
    if (!s.msm_targets.empty()) {
      std::copy(s.msm_targets.begin(), s.msm_targets.end(),
                batch.msm_targets.begin() + static_cast<std::ptrdiff_t>(b * text_len));
    }
    std::copy(s.features.begin(), s.features.end(),
              batch.object_features.begin() + static_cast<std::ptrdiff_t>(b * objects * dim));
    if (!s.mrm_targets.empty()) {
      std::copy(s.mrm_targets.begin(), s.mrm_targets.end(),
                batch.mrm_targets.begin() + static_cast<std::ptrdiff_t>(b * objects));
    }
    batch.object_counts[b] = m;
    std::fill_n(L.image_valid.begin() + static_cast<std::ptrdiff_t>(b * L.image_len), m + 1, 1);
    Real* geo = batch.geometry.data() + b * L.image_len * kGeometryDim;
    const std::array<Real, kGeometryDim> whole{0, 0, 1, 1, 1};
    std::copy(whole.begin(), whole.end(), geo);
    for (std::size_t k = 0; k < m; ++k) {
      const auto g = box_geometry(s.boxes[k], s.width, s.height);
      std::copy(g.begin(), g.end(), geo + (k + 1) * kGeometryDim);
    }
    batch.itm_labels[b] = s.itm_label;
  }
  return batch;
}

}  // namespace ibt::data
