#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "retrieval.hpp"

using namespace avp;
using namespace avp::retrieval;

namespace {

EmbeddingIndex random_index(std::size_t m, std::size_t d, std::uint64_t seed, Modality mod = Modality::visual) {
  EmbeddingIndex idx;
  idx.modality = mod;
  idx.vectors = Embeddings<float>(m, d);
  Rng rng(seed);
  std::normal_distribution<float> g;
  for (auto& v : idx.vectors.values) v = g(rng);
  for (std::size_t i = 0; i < m; ++i) idx.ids.push_back("c" + std::to_string(i % 4) + "_q" + std::to_string(i));
  return idx;
}

EmbeddingIndex normalised(EmbeddingIndex idx) {
  for (std::size_t i = 0; i < idx.vectors.rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < idx.vectors.dim; ++k) s += double(idx.vectors.at(i, k)) * idx.vectors.at(i, k);
    for (std::size_t k = 0; k < idx.vectors.dim; ++k) idx.vectors.at(i, k) = float(idx.vectors.at(i, k) / std::sqrt(s));
  }
  return idx;
}

}  // namespace

TEST_CASE("self retrieval ranks every query first") {
  const auto q = random_index(50, 8, 1);
  auto t = q;
  t.modality = Modality::audio;
  const auto r = rank_of_true_match(q, t);
  for (auto rank : r.ranks) CHECK(rank == 1);
  CHECK(recall_at(r.ranks, 1) == 1.0);
  CHECK(median_rank(r.ranks) == 1.0);
  CHECK(r.tie_count == 0);
}

TEST_CASE("two-item corpus with the true match farther ranks it second") {
  EmbeddingIndex q, t;
  q.ids = t.ids = {"a", "b"};
  q.vectors = Embeddings<float>(2, 1);
  t.vectors = Embeddings<float>(2, 1);
  q.vectors.at(0, 0) = 0.0f, q.vectors.at(1, 0) = 5.0f;
  t.vectors.at(0, 0) = 4.0f, t.vectors.at(1, 0) = 1.0f;
  const auto r = rank_of_true_match(q, t);
  CHECK(r.ranks == std::vector<std::size_t>{2, 2});
}

TEST_CASE("ties are broken by id and flagged") {
  EmbeddingIndex q, t;
  q.ids = {"b", "a"};
  t.ids = {"a", "b"};
  q.vectors = Embeddings<float>(2, 1, 0.0f);
  t.vectors = Embeddings<float>(2, 1, 1.0f);
  const auto r = rank_of_true_match(q, t);
  CHECK(r.ranks == std::vector<std::size_t>{2, 1});
  CHECK(r.tie_count == 2);
}

TEST_CASE("mismatched id sets are rejected") {
  auto q = random_index(4, 2, 1), t = random_index(4, 2, 2);
  t.ids[3] = "other";
  CHECK_THROWS_AS(rank_of_true_match(q, t), Error);
  CHECK_THROWS_AS(rank_of_true_match(random_index(4, 2, 1), random_index(4, 3, 1)), Error);
}

TEST_CASE("recall is monotone and complete at m") {
  const auto q = random_index(40, 4, 3), t = random_index(40, 4, 4);
  const auto r = rank_of_true_match(q, t);
  double prev = 0.0;
  for (std::size_t k = 1; k <= 40; ++k) {
    const double rk = recall_at(r.ranks, k);
    CHECK(rk >= prev);
    prev = rk;
  }
  CHECK(prev == 1.0);
  for (auto rank : r.ranks) CHECK((rank >= 1 && rank <= 40));
}

TEST_CASE("median rank conventions") {
  CHECK(median_rank({3, 1, 2}) == 2.0);
  CHECK(median_rank({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("euclidean and cosine rankings agree on unit vectors") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto q = normalised(random_index(64, 16, seed)), t = normalised(random_index(64, 16, seed + 100));
    const auto e = rank_of_true_match(q, t);
    q.metric = t.metric = Metric::cosine;
    const auto c = rank_of_true_match(q, t);
    CHECK(e.ranks == c.ranks);
  }
}

TEST_CASE("random embeddings give a median rank near m/2") {
  double total = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) total += random_baseline_median_rank(256, 32, s);
  const double mean = total / 20.0;
  CHECK(mean >= 0.4 * 256);
  CHECK(mean <= 0.6 * 256);
}

TEST_CASE("distances") {
  const float x[2] = {3.0f, 0.0f}, y[2] = {0.0f, 4.0f}, z[2] = {0.0f, 0.0f};
  CHECK(distance(Metric::euclidean, x, y, 2) == doctest::Approx(5.0));
  CHECK(distance(Metric::cosine, x, y, 2) == doctest::Approx(1.0));
  CHECK(distance(Metric::cosine, x, x, 2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(distance(Metric::cosine, x, z, 2), Error);
}

TEST_CASE("evaluate builds a consistent report") {
  const auto q = random_index(30, 6, 7);
  auto t = q;
  t.modality = Modality::audio;
  for (auto& v : t.vectors.values) v += 0.01f;
  EvalConfig cfg;
  cfg.baseline_seeds = 3;
  const auto r = evaluate(q, t, cfg);
  CHECK(r.m == 30);
  CHECK(r.median_rank == 1.0);
  CHECK(r.class_recall_at_1 == 1.0);
  REQUIRE(r.recall.size() == cfg.ks.size());
  CHECK(r.recall.back() == 1.0);
  CHECK(r.baseline_median_ranks.size() == 3);
  CHECK(report_json(r).find("\"median_rank\"") != std::string::npos);
  CHECK(report_table(r).find("Recall@1") != std::string::npos);

  const auto nn = nearest(t, q.vectors.row(5), 3);
  REQUIRE(nn.size() == 3);
  CHECK(nn[0].id == q.ids[5]);
  CHECK(nn[0].distance <= nn[1].distance);
}

TEST_CASE("empty indexes give an empty report") {
  EmbeddingIndex q, t;
  q.vectors = t.vectors = Embeddings<float>(0, 4);
  CHECK(rank_of_true_match(q, t).ranks.empty());
  const auto r = evaluate(q, t, EvalConfig{});
  CHECK(r.m == 0);
  CHECK(r.ranks.empty());
}

TEST_CASE("norm statistics") {
  auto a = normalised(random_index(10, 5, 1));
  const auto s = norm_stats({&a.vectors});
  CHECK(s.max_unit_error < 1e-6);
  CHECK(s.spread < 1e-6);
  const auto b = random_index(10, 5, 2);
  CHECK(norm_stats({&b.vectors}).spread > 0.1);
}

TEST_CASE("index export round trips") {
  auto idx = random_index(7, 3, 9, Modality::audio);
  idx.metric = Metric::cosine;
  const auto back = deserialize_index(serialize_index(idx));
  CHECK(back.ids == idx.ids);
  CHECK(back.vectors.values == idx.vectors.values);
  CHECK(back.modality == Modality::audio);
  CHECK(back.metric == Metric::cosine);
  auto bytes = serialize_index(idx);
  bytes.resize(bytes.size() - 5);
  CHECK_THROWS_AS(deserialize_index(bytes), Error);
}

TEST_CASE("corpus embeddings equal the encoder on eval inputs") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "avp_embed_corpus";
  fs::remove_all(dir);
  data::SynthSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 0;
  spec.test_per_class = 3;
  spec.image_size = 48;
  spec.duration = 1.0;
  const auto m = data::generate_synthetic(spec, dir.string());

  train::TrainConfig c;
  for (auto* e : {&c.image_encoder, &c.audio_encoder}) {
    e->stem_kernel = 8;
    e->stem_stride = 8;
    e->stage_channels = {4};
    e->embedding_dim = 6;
  }
  c.augment.crop_min = 32;
  c.augment.crop_max = 48;
  c.augment.out_size = 32;
  c.frontend.num_bands = 32;
  c.frontend.crop_frames = 16;
  const auto ck = train::initial_state(c);
  const data::DataSource src(m, data::Split::test, c.frontend, 1);

  const auto a = embed_corpus(ck, src, 4, 1), b = embed_corpus(ck, src, 2, 2);
  CHECK(a.visual.vectors.values == b.visual.vectors.values);
  CHECK(a.audio.vectors.values == b.audio.vectors.values);
  CHECK(a.visual.ids == src.ids());
  CHECK(a.visual.metric == Metric::euclidean);

  const auto batch = src.eval_batch({4}, c.augment, 1);
  const auto ev = nn::embed(ck.image, batch.images), ea = nn::embed(ck.audio, batch.spectrograms);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(a.visual.vectors.at(4, k) == ev.at(0, k));
    CHECK(a.audio.vectors.at(4, k) == ea.at(0, k));
  }

  EvalConfig ecfg;
  ecfg.baseline_seeds = 2;
  const auto rows = ablation_report({ck, ck, ck}, {"x", "y", "z"}, src, ecfg, 1);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].report.ranks == rows[1].report.ranks);
  CHECK(rows[1].report.ranks == rows[2].report.ranks);
  CHECK(rows[0].norms.spread == rows[2].norms.spread);

  auto other = c;
  other.frontend.num_bands = 16;
  const data::DataSource mismatched(m, data::Split::test, other.frontend, 1);
  CHECK_THROWS_AS(embed_corpus(ck, mismatched, 4, 1), Error);
  fs::remove_all(dir);
}
