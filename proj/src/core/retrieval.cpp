#include "retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <json.hpp>
#include <numeric>
#include <unordered_map>

#include "binary_io.hpp"

namespace avp::retrieval {

const char* to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }
const char* to_string(Modality m) { return m == Modality::audio ? "audio" : "visual"; }
const char* to_string(Direction d) { return d == Direction::audio_to_image ? "audio-to-image" : "image-to-audio"; }

Metric parse_metric(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine") return Metric::cosine;
  throw Error(Errc::invalid_argument, "unknown metric '" + s + "' (expected euclidean or cosine)");
}

Modality parse_modality(const std::string& s) {
  if (s == "visual" || s == "image") return Modality::visual;
  if (s == "audio") return Modality::audio;
  throw Error(Errc::invalid_argument, "unknown modality '" + s + "' (expected visual or audio)");
}

Direction parse_direction(const std::string& s) {
  if (s == "image-to-audio") return Direction::image_to_audio;
  if (s == "audio-to-image") return Direction::audio_to_image;
  throw Error(Errc::invalid_argument, "unknown direction '" + s + "' (expected image-to-audio or audio-to-image)");
}

Metric metric_for(loss::Kind k) { return k == loss::Kind::contrastive ? Metric::cosine : Metric::euclidean; }

void EvalConfig::validate() const {
  if (ks.empty()) throw Error(Errc::invalid_argument, "eval.ks must list at least one cutoff");
  for (auto k : ks)
    if (k == 0) throw Error(Errc::invalid_argument, "Recall@K cutoffs must be positive");
  if (batch == 0) throw Error(Errc::invalid_argument, "eval.batch must be positive");
}

CorpusEmbeddings embed_corpus(const train::Checkpoint& ckpt, const data::DataSource& source, std::size_t batch,
                              std::size_t threads) {
  const auto cfg = train::checkpoint_config(ckpt);
  if (!(source.frontend() == cfg.frontend))
    throw Error(Errc::invalid_argument, "data source audio front-end differs from the checkpoint's");
  if (batch == 0) throw Error(Errc::invalid_argument, "embedding batch size must be positive");
  const Metric metric = metric_for(cfg.loss_kind);
  const std::size_t m = source.size(), d = cfg.image_encoder.embedding_dim;
  CorpusEmbeddings out;
  out.visual = {source.ids(), Embeddings<float>(m, d), Modality::visual, metric};
  out.audio = {source.ids(), Embeddings<float>(m, d), Modality::audio, metric};
  for (std::size_t b = 0; b < m; b += batch) {
    std::vector<std::size_t> idx(std::min(batch, m - b));
    std::iota(idx.begin(), idx.end(), b);
    const auto pb = source.eval_batch(idx, cfg.augment, threads);
    auto ev = nn::embed(ckpt.image, pb.images, threads);
    auto ea = nn::embed(ckpt.audio, pb.spectrograms, threads);
    if (metric == Metric::cosine) {
      ev = loss::l2_normalize_rows(ev);
      ea = loss::l2_normalize_rows(ea);
    }
    std::copy(ev.values.begin(), ev.values.end(), out.visual.vectors.values.begin() + b * d);
    std::copy(ea.values.begin(), ea.values.end(), out.audio.vectors.values.begin() + b * d);
  }
  return out;
}

double distance(Metric m, const float* x, const float* y, std::size_t d) {
  if (m == Metric::euclidean) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double t = static_cast<double>(x[k]) - y[k];
      acc += t * t;
    }
    return std::sqrt(acc);
  }
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    xy += static_cast<double>(x[k]) * y[k];
    xx += static_cast<double>(x[k]) * x[k];
    yy += static_cast<double>(y[k]) * y[k];
  }
  if (!(xx > 0.0) || !(yy > 0.0)) throw Error(Errc::numeric, "cosine distance of a zero vector");
  return 1.0 - xy / std::sqrt(xx * yy);
}

namespace {

void check_index(const EmbeddingIndex& idx, const char* what) {
  if (idx.ids.size() != idx.vectors.rows)
    throw Error(Errc::invalid_argument, std::string(what) + " index has mismatched ids and rows");
}

}  // namespace

Ranking rank_of_true_match(const EmbeddingIndex& queries, const EmbeddingIndex& targets) {
  check_index(queries, "query");
  check_index(targets, "target");
  if (queries.vectors.dim != targets.vectors.dim && queries.vectors.rows > 0)
    throw Error(Errc::invalid_argument, "query and target dimensions differ");
  if (queries.metric != targets.metric) throw Error(Errc::invalid_argument, "query and target metrics differ");
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < targets.ids.size(); ++j)
    if (!pos.emplace(targets.ids[j], j).second)
      throw Error(Errc::invalid_argument, "duplicate target id '" + targets.ids[j] + "'");
  if (queries.ids.size() != targets.ids.size())
    throw Error(Errc::invalid_argument, "query and target id sets differ in size");
  std::unordered_map<std::string, bool> seen;
  for (const auto& id : queries.ids) {
    if (!pos.count(id)) throw Error(Errc::invalid_argument, "query id '" + id + "' has no target");
    if (!seen.emplace(id, true).second) throw Error(Errc::invalid_argument, "duplicate query id '" + id + "'");
  }

  const std::size_t m = queries.ids.size(), d = queries.vectors.dim;
  Ranking r;
  r.ranks.resize(m);
  r.tied.assign(m, false);
  std::vector<double> dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* q = queries.vectors.row(i);
    for (std::size_t j = 0; j < m; ++j) dist[j] = distance(queries.metric, q, targets.vectors.row(j), d);
    const std::size_t t = pos[queries.ids[i]];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == t) continue;
      if (dist[j] < dist[t]) {
        ++rank;
      } else if (dist[j] == dist[t]) {
        r.tied[i] = true;
        if (targets.ids[j] < targets.ids[t]) ++rank;
      }
    }
    r.ranks[i] = rank;
    if (r.tied[i]) ++r.tie_count;
  }
  return r;
}

std::vector<Neighbor> nearest(const EmbeddingIndex& targets, const float* query, std::size_t k) {
  check_index(targets, "target");
  std::vector<Neighbor> all(targets.ids.size());
  for (std::size_t j = 0; j < all.size(); ++j)
    all[j] = {targets.ids[j], distance(targets.metric, query, targets.vectors.row(j), targets.vectors.dim)};
  const auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
  all.resize(k);
  return all;
}

double median_rank(std::vector<std::size_t> ranks) {
  if (ranks.empty()) return 0.0;
  std::sort(ranks.begin(), ranks.end());
  const std::size_t m = ranks.size();
  if (m % 2) return static_cast<double>(ranks[m / 2]);
  return 0.5 * (static_cast<double>(ranks[m / 2 - 1]) + static_cast<double>(ranks[m / 2]));
}

double recall_at(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double random_baseline_median_rank(std::size_t m, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g;
  EmbeddingIndex q, t;
  q.vectors = Embeddings<float>(m, d);
  t.vectors = Embeddings<float>(m, d);
  for (auto& v : q.vectors.values) v = g(rng);
  for (auto& v : t.vectors.values) v = g(rng);
  for (std::size_t i = 0; i < m; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "r%08zu", i);
    q.ids.push_back(id);
  }
  t.ids = q.ids;
  t.modality = Modality::audio;
  return median_rank(rank_of_true_match(q, t).ranks);
}

Report evaluate(const EmbeddingIndex& queries, const EmbeddingIndex& targets, const EvalConfig& cfg) {
  cfg.validate();
  const auto ranking = rank_of_true_match(queries, targets);
  Report r;
  r.m = queries.ids.size();
  r.dim = queries.vectors.dim;
  r.direction = queries.modality == Modality::visual ? Direction::image_to_audio : Direction::audio_to_image;
  r.metric = queries.metric;
  r.ks = cfg.ks;
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  for (auto k : r.ks) r.recall.push_back(recall_at(ranking.ranks, k));
  r.median_rank = median_rank(ranking.ranks);
  r.query_ids = queries.ids;
  r.ranks = ranking.ranks;
  r.ties = ranking.tie_count;

  std::size_t class_hits = 0;
  for (std::size_t i = 0; i < r.m; ++i) {
    const auto top = nearest(targets, queries.vectors.row(i), 1);
    if (!top.empty() && data::class_of(top[0].id) == data::class_of(queries.ids[i])) ++class_hits;
  }
  r.class_recall_at_1 = r.m ? static_cast<double>(class_hits) / static_cast<double>(r.m) : 0.0;

  if (r.m > 0) {
    for (std::size_t s = 0; s < cfg.baseline_seeds; ++s)
      r.baseline_median_ranks.push_back(random_baseline_median_rank(r.m, r.dim, derive_seed(cfg.seed, s, 0, 7)));
    if (!r.baseline_median_ranks.empty())
      r.baseline_median_rank = std::accumulate(r.baseline_median_ranks.begin(), r.baseline_median_ranks.end(), 0.0) /
                               static_cast<double>(r.baseline_median_ranks.size());
  }
  return r;
}

Report evaluate(const CorpusEmbeddings& corpus, const EvalConfig& cfg) {
  return cfg.direction == Direction::image_to_audio ? evaluate(corpus.visual, corpus.audio, cfg)
                                                    : evaluate(corpus.audio, corpus.visual, cfg);
}

namespace {

nlohmann::ordered_json report_object(const Report& r) {
  nlohmann::ordered_json j;
  j["m"] = r.m;
  j["dim"] = r.dim;
  j["direction"] = to_string(r.direction);
  j["metric"] = to_string(r.metric);
  nlohmann::ordered_json rec = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) rec[std::to_string(r.ks[i])] = r.recall[i];
  j["recall_at"] = rec;
  j["median_rank"] = r.median_rank;
  j["class_recall_at_1"] = r.class_recall_at_1;
  j["ties"] = r.ties;
  j["random_baseline"] = {{"seeds", r.baseline_median_ranks.size()},
                          {"median_rank_mean", r.baseline_median_rank},
                          {"median_ranks", r.baseline_median_ranks}};
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.m; ++i) per.push_back({{"id", r.query_ids[i]}, {"rank", r.ranks[i]}});
  j["per_query"] = per;
  return j;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_json(const Report& r) { return report_object(r).dump(2) + "\n"; }

std::string report_table(const Report& r) {
  std::string out = "retrieval " + std::string(to_string(r.direction)) + " (" + to_string(r.metric) +
                    "), m = " + std::to_string(r.m) + ", d = " + std::to_string(r.dim) + "\n";
  char line[128];
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    std::snprintf(line, sizeof line, "  %-34s %s\n", ("Recall@" + std::to_string(r.ks[i])).c_str(),
                  fixed(r.recall[i], 4).c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "  %-34s %s\n", "median rank", fixed(r.median_rank, 1).c_str());
  out += line;
  std::snprintf(line, sizeof line, "  %-34s %s\n", "class Recall@1", fixed(r.class_recall_at_1, 4).c_str());
  out += line;
  std::snprintf(line, sizeof line, "  %-34s %s\n",
                ("random median rank (" + std::to_string(r.baseline_median_ranks.size()) + " seeds)").c_str(),
                fixed(r.baseline_median_rank, 1).c_str());
  out += line;
  std::snprintf(line, sizeof line, "  %-34s %zu\n", "tied queries", r.ties);
  out += line;
  return out;
}

NormStats norm_stats(const std::vector<const Embeddings<float>*>& sets) {
  NormStats s;
  std::size_t count = 0;
  s.min = INFINITY;
  s.max = -INFINITY;
  for (const auto* e : sets)
    for (std::size_t i = 0; i < e->rows; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < e->dim; ++k) acc += static_cast<double>(e->at(i, k)) * e->at(i, k);
      const double n = std::sqrt(acc);
      s.min = std::min(s.min, n);
      s.max = std::max(s.max, n);
      s.mean += n;
      s.max_unit_error = std::max(s.max_unit_error, std::fabs(n - 1.0));
      ++count;
    }
  if (count == 0) return {};
  s.mean /= static_cast<double>(count);
  s.spread = s.mean > 0.0 ? (s.max - s.min) / s.mean : 0.0;
  return s;
}

std::vector<AblationRow> ablation_report(const std::vector<train::Checkpoint>& ckpts,
                                         const std::vector<std::string>& names, const data::DataSource& source,
                                         const EvalConfig& cfg, std::size_t threads) {
  if (ckpts.empty()) throw Error(Errc::invalid_argument, "ablation needs at least one checkpoint");
  if (names.size() != ckpts.size()) throw Error(Errc::invalid_argument, "one name per checkpoint is required");
  const auto ref = train::checkpoint_config(ckpts[0]);
  for (std::size_t i = 1; i < ckpts.size(); ++i) {
    const auto c = train::checkpoint_config(ckpts[i]);
    if (!(c.image_encoder == ref.image_encoder) || !(c.audio_encoder == ref.audio_encoder) ||
        ckpts[i].step != ckpts[0].step || !(c.frontend == ref.frontend))
      throw Error(Errc::invalid_argument, "checkpoint '" + names[i] + "' is not comparable with '" + names[0] +
                                              "' (encoders, front-end and step count must match)");
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const auto corpus = embed_corpus(ckpts[i], source, cfg.batch, threads);
    AblationRow row;
    row.kind = train::checkpoint_config(ckpts[i]).loss_kind;
    row.checkpoint = names[i];
    row.report = evaluate(corpus, cfg);
    row.norms = norm_stats({&corpus.visual.vectors, &corpus.audio.vectors});
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["loss"] = loss::to_string(r.kind);
    j["checkpoint"] = r.checkpoint;
    j["norm_min"] = r.norms.min;
    j["norm_max"] = r.norms.max;
    j["norm_mean"] = r.norms.mean;
    j["norm_spread"] = r.norms.spread;
    j["max_unit_norm_error"] = r.norms.max_unit_error;
    j["report"] = report_object(r.report);
    arr.push_back(j);
  }
  return nlohmann::ordered_json{{"arms", arr}}.dump(2) + "\n";
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t kmax = rows.empty() || rows[0].report.ks.empty() ? 0 : rows[0].report.ks.back();
  char line[256];
  std::snprintf(line, sizeof line, "%-15s %-10s %12s %12s %10s %12s %12s\n", "loss", "metric",
                ("Recall@" + std::to_string(kmax)).c_str(), "median rank", "class R@1", "norm spread",
                "max |norm-1|");
  std::string out = line;
  for (const auto& r : rows) {
    const double rec = r.report.recall.empty() ? 0.0 : r.report.recall.back();
    std::snprintf(line, sizeof line, "%-15s %-10s %12.4f %12.1f %10.4f %12.4f %12.2e\n", loss::to_string(r.kind),
                  to_string(r.report.metric), rec, r.report.median_rank, r.report.class_recall_at_1, r.norms.spread,
                  r.norms.max_unit_error);
    out += line;
  }
  if (!rows.empty())
    out += "m = " + std::to_string(rows[0].report.m) + " queries (" + to_string(rows[0].report.direction) + ")\n";
  return out;
}

namespace {

constexpr char kIndexMagic[8] = {'A', 'V', 'P', 'E', 'M', 'B', '\0', '\0'};

}  // namespace

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& idx) {
  check_index(idx, "embedding");
  ByteWriter w;
  w.raw(kIndexMagic, sizeof kIndexMagic);
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(idx.vectors.dim));
  w.u8(idx.metric == Metric::cosine ? 1 : 0);
  w.u8(idx.modality == Modality::audio ? 1 : 0);
  w.u64(idx.ids.size());
  for (std::size_t i = 0; i < idx.ids.size(); ++i) {
    w.str(idx.ids[i]);
    for (std::size_t k = 0; k < idx.vectors.dim; ++k) w.f32(idx.vectors.at(i, k));
  }
  return w.take();
}

EmbeddingIndex deserialize_index(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (std::memcmp(r.take(sizeof kIndexMagic), kIndexMagic, sizeof kIndexMagic) != 0)
    throw Error(Errc::format, "not an embedding export");
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingVersion)
    throw Error(Errc::version, "embedding export version " + std::to_string(version) + " is not supported");
  EmbeddingIndex idx;
  const std::uint32_t d = r.u32();
  const std::uint8_t metric = r.u8(), modality = r.u8();
  if (metric > 1 || modality > 1) throw Error(Errc::format, "embedding export has an invalid metric/modality tag");
  idx.metric = metric ? Metric::cosine : Metric::euclidean;
  idx.modality = modality ? Modality::audio : Modality::visual;
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / (4 + 4ull * d)) throw Error(Errc::format, "embedding export is truncated");
  idx.vectors = Embeddings<float>(static_cast<std::size_t>(count), d);
  for (std::size_t i = 0; i < count; ++i) {
    idx.ids.push_back(r.str());
    for (std::size_t k = 0; k < d; ++k) idx.vectors.at(i, k) = r.f32();
  }
  if (r.remaining() != 0) throw Error(Errc::format, "trailing bytes after embedding records");
  return idx;
}

void write_index(const std::string& path, const EmbeddingIndex& idx) { write_file(path, serialize_index(idx)); }

EmbeddingIndex read_index(const std::string& path) {
  try {
    return deserialize_index(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace avp::retrieval
