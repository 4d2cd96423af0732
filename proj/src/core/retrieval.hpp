#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "losses.hpp"
#include "tensor.hpp"
#include "training.hpp"

namespace avp::retrieval {

enum class Metric { euclidean, cosine };
enum class Modality { visual, audio };
enum class Direction { image_to_audio, audio_to_image };

const char* to_string(Metric m);
const char* to_string(Modality m);
const char* to_string(Direction d);
Metric parse_metric(const std::string& s);
Modality parse_modality(const std::string& s);
Direction parse_direction(const std::string& s);

/// Triplet losses train in the full space (euclidean); contrastive on the sphere (cosine).
Metric metric_for(loss::Kind k);

struct EmbeddingIndex {
  std::vector<std::string> ids;
  Embeddings<float> vectors;
  Modality modality = Modality::visual;
  Metric metric = Metric::euclidean;
};

struct EvalConfig {
  Direction direction = Direction::image_to_audio;
  data::Split split = data::Split::test;
  std::vector<std::size_t> ks{1, 5, 10, 100};
  std::size_t baseline_seeds = 20;
  std::size_t top_k = 10;  // retrieve listing length
  std::size_t batch = 32;  // embedding batch size
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusEmbeddings {
  EmbeddingIndex visual;
  EmbeddingIndex audio;
};

/// Eval-preprocessed embeddings of every entry in the source. Contrastive checkpoints yield
/// unit-norm rows and the cosine metric.
CorpusEmbeddings embed_corpus(const train::Checkpoint& ckpt, const data::DataSource& source, std::size_t batch,
                              std::size_t threads);

double distance(Metric m, const float* x, const float* y, std::size_t d);

struct Ranking {
  std::vector<std::size_t> ranks;  // aligned with query ids
  std::vector<bool> tied;          // another target sat at exactly the true match's distance
  std::size_t tie_count = 0;
};

/// rank = 1 + #targets strictly closer than the true match + #equidistant targets whose id
/// sorts before it. Both indexes must hold the same id set.
Ranking rank_of_true_match(const EmbeddingIndex& queries, const EmbeddingIndex& targets);

struct Neighbor {
  std::string id;
  double distance;
};

/// Nearest targets to one query vector, ties broken by id.
std::vector<Neighbor> nearest(const EmbeddingIndex& targets, const float* query, std::size_t k);

double median_rank(std::vector<std::size_t> ranks);
double recall_at(const std::vector<std::size_t>& ranks, std::size_t k);

struct Report {
  std::size_t m = 0;
  std::size_t dim = 0;
  Direction direction = Direction::image_to_audio;
  Metric metric = Metric::euclidean;
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks
  double median_rank = 0.0;
  std::vector<std::string> query_ids;
  std::vector<std::size_t> ranks;
  std::size_t ties = 0;
  double class_recall_at_1 = 0.0;  // top-1 target shares the query's class label
  std::vector<double> baseline_median_ranks;
  double baseline_median_rank = 0.0;  // mean over baseline seeds
};

/// Median rank of i.i.d. standard-normal query/target sets of the given shape.
double random_baseline_median_rank(std::size_t m, std::size_t d, std::uint64_t seed);

Report evaluate(const CorpusEmbeddings& corpus, const EvalConfig& cfg);
Report evaluate(const EmbeddingIndex& queries, const EmbeddingIndex& targets, const EvalConfig& cfg);

std::string report_json(const Report& r);
std::string report_table(const Report& r);

struct NormStats {
  double min = 0.0, max = 0.0, mean = 0.0;
  double spread = 0.0;          // (max - min) / mean
  double max_unit_error = 0.0;  // max | ||x|| - 1 |
};

NormStats norm_stats(const std::vector<const Embeddings<float>*>& sets);

struct AblationRow {
  loss::Kind kind = loss::Kind::batch_triplet;
  std::string checkpoint;
  Report report;
  NormStats norms;
};

/// Evaluates one checkpoint per loss on the same source. Checkpoints must share encoder
/// configs and step count.
std::vector<AblationRow> ablation_report(const std::vector<train::Checkpoint>& ckpts,
                                         const std::vector<std::string>& names, const data::DataSource& source,
                                         const EvalConfig& cfg, std::size_t threads);

std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

inline constexpr std::uint32_t kEmbeddingVersion = 1;

std::vector<std::uint8_t> serialize_index(const EmbeddingIndex& idx);
EmbeddingIndex deserialize_index(const std::vector<std::uint8_t>& bytes);
void write_index(const std::string& path, const EmbeddingIndex& idx);
EmbeddingIndex read_index(const std::string& path);

}  // namespace avp::retrieval
