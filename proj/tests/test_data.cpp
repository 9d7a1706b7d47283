#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ibt/data.hpp"
#include "ibt/ops.hpp"

using namespace ibt;
using namespace ibt::data;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ibt_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthOptions small_options() {
  SynthOptions o;
  o.seed = 11;
  o.num_images = 12;
  o.captions_per_image = 2;
  return o;
}

}  // namespace

TEST_CASE("empty file gives empty corpus") {
  auto p = temp_path("empty.jsonl");
  std::ofstream(p).close();
  auto c = load_corpus(p, synth_vocabulary(4));
  CHECK(c.empty());
  CHECK(c.image_ids().empty());
}

TEST_CASE("single line round trip") {
  auto corpus = synth_corpus(small_options());
  Corpus one(corpus.vocab(), {corpus.pairs().front()});
  auto p = temp_path("one.jsonl");
  save_corpus(one, p);
  auto back = load_corpus(p, corpus.vocab());
  REQUIRE(back.size() == 1);
  const auto& a = one.pairs().front();
  const auto& b = back.pairs().front();
  CHECK(a.image_id == b.image_id);
  CHECK(a.caption_id == b.caption_id);
  CHECK(a.tokens == b.tokens);
  CHECK(a.width == b.width);
  CHECK(a.height == b.height);
  CHECK(a.objects == b.objects);
}

TEST_CASE("bbox outside image is rejected with its line number") {
  auto corpus = synth_corpus(small_options());
  auto bad = corpus.pairs()[1];
  bad.objects[0].box.x2 = bad.width + 5.0;
  std::ostringstream out;
  write_pair(out, corpus.pairs()[0]);
  write_pair(out, bad);
  std::istringstream in(out.str());
  try {
    (void)read_pairs(in, corpus.vocab());
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.rfind("line 2:", 0) == 0);
    CHECK(msg.find("bounds") != std::string::npos);
  }
}

TEST_CASE("malformed json and broken invariants are rejected") {
  auto vocab = synth_vocabulary(4);
  std::istringstream garbage("{\"image_id\": 1,\n");
  CHECK_THROWS_AS(read_pairs(garbage, vocab), std::invalid_argument);

  auto pair = synth_corpus(small_options()).pairs()[0];
  auto no_sep = pair;
  no_sep.tokens.pop_back();
  CHECK_THROWS_AS(validate_pair(no_sep, vocab), std::invalid_argument);
  auto no_objects = pair;
  no_objects.objects.clear();
  CHECK_THROWS_AS(validate_pair(no_objects, vocab), std::invalid_argument);
  auto bad_token = pair;
  bad_token.tokens[1] = vocab.size;
  CHECK_THROWS_AS(validate_pair(bad_token, vocab), std::invalid_argument);

  auto dup = pair;
  CHECK_THROWS_AS(Corpus(vocab, {pair, dup}), std::invalid_argument);
}

TEST_CASE("synth corpus is seeded") {
  auto a = synth_corpus(small_options());
  auto b = synth_corpus(small_options());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pairs()[i].tokens == b.pairs()[i].tokens);
    CHECK(a.pairs()[i].objects == b.pairs()[i].objects);
  }
  auto opt = small_options();
  opt.seed = 12;
  auto c = synth_corpus(opt);
  bool differs = false;
  for (std::size_t i = 0; i < std::min(a.size(), c.size()); ++i) differs |= a.pairs()[i].tokens != c.pairs()[i].tokens;
  CHECK(differs);
}

TEST_CASE("noise free features are a function of the class") {
  auto opt = small_options();
  opt.noise_std = 0;
  opt.num_images = 40;
  auto c = synth_corpus(opt);
  std::map<int, std::vector<Real>> seen;
  for (const auto& p : c.pairs())
    for (const auto& o : p.objects) {
      auto [it, fresh] = seen.emplace(o.label, o.feature);
      if (!fresh) CHECK(it->second == o.feature);
      // A linear probe reading coordinate `label` classifies perfectly.
      auto arg = std::max_element(o.feature.begin(), o.feature.end()) - o.feature.begin();
      CHECK(arg == o.label);
    }
}

TEST_CASE("caption tokens are object classes plus fillers") {
  auto opt = small_options();
  auto c = synth_corpus(opt);
  const int first_filler = synth_class_token(opt.num_classes);
  for (const auto& p : c.pairs()) {
    CHECK(p.tokens.front() == c.vocab().cls_id);
    CHECK(p.tokens.back() == c.vocab().sep_id);
    std::vector<int> classes, words;
    for (const auto& o : p.objects) classes.push_back(synth_class_token(o.label));
    int fillers = 0;
    for (std::size_t i = 1; i + 1 < p.tokens.size(); ++i) {
      if (p.tokens[i] >= first_filler) {
        ++fillers;
      } else {
        words.push_back(p.tokens[i]);
      }
    }
    std::sort(classes.begin(), classes.end());
    std::sort(words.begin(), words.end());
    CHECK(classes == words);
    CHECK(fillers <= opt.max_fillers);
    CHECK(p.objects.size() >= 2);
    CHECK(p.objects.size() <= 6);
  }
  CHECK(c.image_ids().size() == opt.num_images);
  CHECK(c.pairs_of_image(3).size() == 2);
  CHECK(c.image_record(3).objects == c.pairs()[c.pairs_of_image(3)[1]].objects);
}

TEST_CASE("save load save is byte identical") {
  auto c = synth_corpus(small_options());
  auto p1 = temp_path("a.jsonl"), p2 = temp_path("b.jsonl");
  save_corpus(c, p1);
  save_corpus(load_corpus(p1, c.vocab()), p2);
  CHECK(slurp(p1) == slurp(p2));

  auto v1 = temp_path("v1.json"), v2 = temp_path("v2.json");
  save_vocabulary(c.vocab(), v1);
  save_vocabulary(load_vocabulary(v1), v2);
  CHECK(slurp(v1) == slurp(v2));
  CHECK(load_vocabulary(v1).names == c.vocab().names);
}

TEST_CASE("split by image keeps captions together") {
  auto c = synth_corpus(small_options());
  auto [left, right] = c.split_images(5);
  CHECK(left.image_ids().size() == 5);
  CHECK(right.image_ids().size() == 7);
  CHECK(left.size() + right.size() == c.size());
  for (auto id : left.image_ids()) CHECK_THROWS((void)right.pairs_of_image(id));
}

TEST_CASE("single sample batch layout") {
  auto pair = synth_corpus(small_options()).pairs()[0];
  std::vector<Sample> s{to_sample(pair)};
  auto b = make_batch(s, 64, 16, 0);
  const auto m = pair.objects.size();
  const auto n2 = pair.tokens.size();
  CHECK(b.layout.image_len == m + 1);
  CHECK(b.layout.text_len == n2);
  CHECK(b.layout.length() == m + 1 + n2);
  CHECK(std::all_of(b.layout.image_valid.begin(), b.layout.image_valid.end(), [](auto v) { return v == 1; }));
  CHECK(std::all_of(b.msm_targets.begin(), b.msm_targets.end(), [](int t) { return t == kIgnoreTarget; }));
  for (std::size_t g = 0; g < kGeometryDim; ++g) CHECK(b.geometry[g] == std::array<Real, 5>{0, 0, 1, 1, 1}[g]);
  auto geo = box_geometry(pair.objects[0].box, pair.width, pair.height);
  for (std::size_t g = 0; g < kGeometryDim; ++g) CHECK(b.geometry[kGeometryDim + g] == geo[g]);
}

TEST_CASE("mixed batch masks exactly the real positions") {
  auto c = synth_corpus(small_options());
  std::vector<Sample> s;
  for (std::size_t i = 0; i < 6; ++i) s.push_back(to_sample(c.pairs()[i]));
  auto b = make_batch(s, 64, 16, c.vocab().pad_id);
  const auto& L = b.layout;
  const auto fused = L.fused_valid();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto m = s[i].object_count(), n = s[i].tokens.size();
    for (std::size_t r = 0; r < L.image_len; ++r) {
      CHECK(L.image_valid[i * L.image_len + r] == (r <= m ? 1 : 0));
      CHECK(fused[i * L.length() + r] == L.image_valid[i * L.image_len + r]);
      if (r > m) {
        for (std::size_t g = 0; g < kGeometryDim; ++g) CHECK(b.geometry[(i * L.image_len + r) * kGeometryDim + g] == 0);
      }
    }
    for (std::size_t r = 0; r < L.text_len; ++r) {
      CHECK(L.text_valid[i * L.text_len + r] == (r < n ? 1 : 0));
      CHECK(fused[i * L.length() + L.text_begin() + r] == L.text_valid[i * L.text_len + r]);
      if (r >= n) CHECK(b.token_ids[i * L.text_len + r] == c.vocab().pad_id);
    }
    for (std::size_t k = m; k < L.max_objects(); ++k)
      for (std::size_t d = 0; d < b.feature_dim; ++d)
        CHECK(b.object_features[(i * L.max_objects() + k) * b.feature_dim + d] == 0);
  }
}

TEST_CASE("oversized samples are rejected, not truncated") {
  auto pair = synth_corpus(small_options()).pairs()[0];
  std::vector<Sample> s{to_sample(pair)};
  CHECK_THROWS_AS(make_batch(s, pair.tokens.size() - 1, 16, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_batch(s, 64, pair.objects.size() - 1, 0), std::invalid_argument);
  CHECK_NOTHROW(make_batch(s, pair.tokens.size(), pair.objects.size(), 0));
}
