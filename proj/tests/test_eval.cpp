#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ibt/eval.hpp"
#include "ibt/kernels.hpp"
#include "ibt/random.hpp"
#include "oracles.hpp"

using namespace ibt;
using namespace ibt::eval;

namespace {

ScoreMatrix random_matrix(std::size_t captions, std::size_t images, Rng& rng, bool integer_scores = false) {
  ScoreMatrix m;
  m.captions = captions;
  m.images = images;
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < captions * images; ++i)
    m.scores.push_back(integer_scores ? static_cast<Real>(uniform_int(rng, 0, 4)) : normal(rng));
  for (std::size_t c = 0; c < captions; ++c) m.gold.push_back(uniform_int<std::size_t>(rng, 0, images - 1));
  return m;
}

std::vector<std::vector<double>> rows_of(const ScoreMatrix& m) {
  std::vector<std::vector<double>> rows(m.captions);
  for (std::size_t c = 0; c < m.captions; ++c)
    for (std::size_t i = 0; i < m.images; ++i) rows[c].push_back(m.at(c, i));
  return rows;
}

data::Corpus corpus_of(std::size_t images, std::size_t captions_per_image = 1) {
  data::SynthOptions o;
  o.seed = 8;
  o.num_images = images;
  o.captions_per_image = captions_per_image;
  o.num_classes = 6;
  o.feature_dim = 8;
  o.max_objects = 4;
  return data::synth_corpus(o);
}

model::InterBert tiny_net(const data::Corpus& c) {
  model::ModelConfig m;
  m.hidden_size = 8;
  m.num_heads = 2;
  m.ffn_size = 16;
  m.vocab_size = static_cast<std::size_t>(c.vocab().size);
  m.object_feature_dim = c.feature_dim();
  m.max_objects = 4;
  m.num_object_classes = 6;
  m.init_std = 0.3;
  return model::InterBert::initialize(m, 2);
}

}  // namespace

TEST_CASE("recall matches the sort oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_matrix(50, 50, rng, trial % 2 == 1);
    const auto rows = rows_of(m);
    for (std::size_t k : {1, 5, 10, 50}) CHECK(recall_at_k(m, k) == oracle::recall_by_sort(rows, m.gold, k));
  }
}

TEST_CASE("recall properties") {
  Rng rng(2);
  SUBCASE("monotone in k and full at k = N") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = random_matrix(30, 20, rng, true);
      CHECK(recall_at_k(m, 1) <= recall_at_k(m, 5));
      CHECK(recall_at_k(m, 5) <= recall_at_k(m, 10));
      CHECK(recall_at_k(m, 20) == 1.0);
    }
  }
  SUBCASE("gold always highest") {
    auto m = random_matrix(10, 10, rng);
    for (std::size_t c = 0; c < 10; ++c) m.scores[c * 10 + m.gold[c]] = 100;
    CHECK(recall_at_k(m, 1) == 1.0);
  }
  SUBCASE("ties go to the lower index") {
    ScoreMatrix m{1, 3, {1, 1, 1}, {1}};
    CHECK(gold_rank(m, 0) == 2);
    CHECK(recall_at_k(m, 1) == 0.0);
    m.gold = {0};
    CHECK(recall_at_k(m, 1) == 1.0);
  }
  SUBCASE("a strictly lower image never hurts") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto m = random_matrix(20, 12, rng, true);
      ScoreMatrix wider = m;
      wider.images = 13;
      wider.scores.clear();
      for (std::size_t c = 0; c < m.captions; ++c) {
        Real lowest = m.at(c, 0);
        for (std::size_t i = 0; i < m.images; ++i) {
          wider.scores.push_back(m.at(c, i));
          lowest = std::min(lowest, m.at(c, i));
        }
        wider.scores.push_back(lowest - 1);
      }
      for (std::size_t k : {1, 5, 10}) CHECK(recall_at_k(wider, k) >= recall_at_k(m, k));
    }
  }
  SUBCASE("random scores give chance recall") {
    double sum = 0;
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
      Rng r(static_cast<std::uint64_t>(1000 + s));
      sum += recall_at_k(random_matrix(100, 100, r), 1);
    }
    CHECK(std::abs(sum / seeds - 0.01) < 0.005);
  }
  SUBCASE("bad inputs") {
    const auto m = random_matrix(3, 4, rng);
    CHECK_THROWS(recall_at_k(m, 0));
    CHECK_THROWS(recall_at_k(m, 5));
    auto broken = m;
    broken.gold[0] = 4;
    CHECK_THROWS(recall_at_k(broken, 1));
  }
}

TEST_CASE("score_all") {
  const auto corpus = corpus_of(12);
  const auto net = tiny_net(corpus);
  std::vector<std::size_t> captions(12), images(12);
  std::iota(captions.begin(), captions.end(), 0);
  std::iota(images.begin(), images.end(), 0);
  const auto m = score_all(net, corpus, captions, images);
  CHECK(m.scores.size() == 144);
  for (std::size_t c = 0; c < 12; ++c) CHECK(m.gold[c] == c);

  SUBCASE("single pair equals the batch logit") {
    const std::vector<std::size_t> one{3}, img{3};
    const auto s = score_all(net, corpus, one, img);
    CHECK(s.captions == 1);
    CHECK(s.images == 1);
    CHECK(s.scores[0] == m.at(3, 3));
  }
  SUBCASE("permuting images permutes columns") {
    std::vector<std::size_t> perm = images;
    std::reverse(perm.begin(), perm.end());
    const auto p = score_all(net, corpus, captions, perm);
    for (std::size_t c = 0; c < 12; ++c) {
      CHECK(p.gold[c] == 11 - c);
      for (std::size_t i = 0; i < 12; ++i) CHECK(p.at(c, i) == m.at(c, 11 - i));
    }
  }
  SUBCASE("repeatable and independent of the kernel path") {
    CHECK(score_all(net, corpus, captions, images).scores == m.scores);
    kernels::set_parallel(false);
    const auto serial = score_all(net, corpus, captions, images);
    kernels::set_parallel(true);
    CHECK(serial.scores == m.scores);
  }
  SUBCASE("caption outside the pool") {
    const std::vector<std::size_t> cap{0}, img{1, 2};
    CHECK_THROWS(score_all(net, corpus, cap, img));
  }
}

TEST_CASE("zero-shot evaluation") {
  const auto corpus = corpus_of(25, 2);
  const auto net = tiny_net(corpus);
  const auto r = zero_shot_eval(net, corpus, 10);
  CHECK(r.pools == 2);
  CHECK(r.pool_size == 10);
  CHECK(r.captions == 40);
  CHECK(r.r1 <= r.r5);
  CHECK(r.r5 <= r.r10);
  CHECK(r.r10 == 1.0);
  const auto again = zero_shot_eval(net, corpus, 10);
  CHECK(again.r1 == r.r1);
  CHECK(again.r5 == r.r5);
  const auto whole = zero_shot_eval(net, corpus, 50);
  CHECK(whole.pools == 1);
  CHECK(whole.pool_size == 25);
  CHECK_THROWS(zero_shot_eval(net, corpus_of(8), 50));
}

TEST_CASE("untrained model is near chance") {
  const auto corpus = corpus_of(100);
  const auto net = tiny_net(corpus);
  const auto r = zero_shot_eval(net, corpus, 50);
  // 100 captions at chance 0.02: 0.1 is beyond 5 sigma.
  CHECK(r.r1 < 0.1);
  CHECK(std::abs(multiple_choice_accuracy(net, corpus, 1) - 0.25) < 0.15);
  const double itm = heldout_itm_accuracy(net, corpus, 1);
  CHECK(itm >= 0.3);
  CHECK(itm <= 0.7);
}

TEST_CASE("knn") {
  SUBCASE("matches the cosine sort oracle") {
    Rng rng(5);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 20; ++trial) {
      Embeddings e{20, 6, {}};
      std::vector<std::vector<double>> rows(20);
      for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t d = 0; d < 6; ++d) {
          const auto v = static_cast<float>(normal(rng));
          e.values.push_back(v);
          rows[i].push_back(v);
        }
      const auto trigger = uniform_int<std::size_t>(rng, 0, 19);
      const auto got = knn_items(e, trigger, 5);
      const auto want = oracle::knn_by_sort(rows, trigger, 5);
      REQUIRE(got.size() == 5);
      for (std::size_t i = 0; i < 5; ++i) CHECK(got[i].id == want[i]);
    }
  }
  SUBCASE("duplicate of the trigger ranks first") {
    Embeddings e{4, 2, {1, 2, 0, 1, 1, 2, -1, 0}};
    const auto n = knn_items(e, 0, 3);
    CHECK(n[0].id == 2);
    CHECK(n[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& x : n) CHECK(x.id != 0);
  }
  SUBCASE("two items") {
    Embeddings e{2, 2, {1, 0, 0, 1}};
    CHECK(knn_items(e, 1, 1)[0].id == 0);
    CHECK_THROWS_AS(knn_items(e, 1, 2), std::out_of_range);
    CHECK_THROWS_AS(knn_items(e, 2, 1), std::out_of_range);
  }
  SUBCASE("ties by ascending id") {
    Embeddings e{4, 1, {1, 2, 3, 4}};
    const auto n = knn_items(e, 3, 3);
    CHECK(n[0].id == 0);
    CHECK(n[1].id == 1);
    CHECK(n[2].id == 2);
  }
}

TEST_CASE("item embeddings") {
  const auto corpus = corpus_of(6);
  const auto net = tiny_net(corpus);
  const auto prod = item_embeddings(net, corpus);
  const auto img = item_embeddings(net, corpus, EmbeddingKind::kImage);
  const auto txt = item_embeddings(net, corpus, parse_embedding_kind("text"));
  CHECK(prod.count == 6);
  CHECK(prod.dim == 8);
  for (std::size_t i = 0; i < prod.values.size(); ++i)
    CHECK(prod.values[i] == doctest::Approx(img.values[i] * txt.values[i]).epsilon(1e-6));
  CHECK_THROWS(parse_embedding_kind("cls"));

  std::stringstream buf;
  write_embeddings(prod, buf);
  CHECK(buf.str().size() == 8 + 4 * 48);
  CHECK(static_cast<unsigned char>(buf.str()[0]) == 6);
  CHECK(buf.str()[1] == 0);
  CHECK(read_embeddings(buf) == prod);
  std::stringstream truncated(buf.str().substr(0, 20));
  CHECK_THROWS(read_embeddings(truncated));
}
