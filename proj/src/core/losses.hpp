#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace avp::loss {

enum class Kind { batch_triplet, naive_triplet, contrastive };
enum class Reduction { sum, mean };

const char* to_string(Kind k);
Kind parse_kind(const std::string& s);
const char* to_string(Reduction r);
Reduction parse_reduction(const std::string& s);

struct LossConfig {
  double margin = 1.0;
  double temperature = 0.1;  // contrastive only
  Reduction reduction = Reduction::mean;
  /// Batch triplet only: also sum the 2n diagonal terms, each equal to the margin
  /// with zero gradient.
  bool include_diagonal = false;

  void validate() const;
};

/// D[i][j] = ||a_i - v_j||_2: rows index audio, columns index visual.
template <typename T>
Embeddings<T> pairwise_distance_matrix(const Embeddings<T>& V, const Embeddings<T>& A);

/// max(0, ||x - y+|| - ||x - y-|| + margin)
template <typename T>
T naive_triplet_loss(const T* x, const T* y_pos, const T* y_neg, std::size_t dim, T margin);

template <typename T>
struct LossResult {
  T loss = 0;
  Embeddings<T> grad_v;
  Embeddings<T> grad_a;
  std::size_t active_terms = 0;
  std::size_t total_terms = 0;
};

/// Row terms max(0, D_ii - D_ij + m) for j != i plus column terms max(0, D_jj - D_ij + m)
/// for i != j. Hinges at exactly zero and zero-length difference vectors get zero gradient.
/// Mean reduction divides by n(n-1).
template <typename T>
LossResult<T> batch_triplet_loss(const Embeddings<T>& V, const Embeddings<T>& A, const LossConfig& cfg);

/// One triplet per anchor v_i: positive a_i, negative a_{negatives[i]}. Mean reduction divides by n.
template <typename T>
LossResult<T> naive_triplet_batch_loss(const Embeddings<T>& V, const Embeddings<T>& A,
                                       const std::vector<std::size_t>& negatives, const LossConfig& cfg);

/// Draws, for each anchor i, a negative index uniformly from {0..n-1} \ {i}.
std::vector<std::size_t> sample_negatives(std::size_t n, Rng& rng);

/// Symmetric cross-modal InfoNCE on row-normalized embeddings; always averaged over rows.
template <typename T>
LossResult<T> contrastive_loss(const Embeddings<T>& V, const Embeddings<T>& A, const LossConfig& cfg);

template <typename T>
Embeddings<T> l2_normalize_rows(const Embeddings<T>& X);

struct GradCheckReport {
  std::string kind;
  std::size_t n = 0, dim = 0;
  double max_rel_error = 0.0;  // max over {V, A} of ||g - g_fd||_inf / max(||g||_inf, ||g_fd||_inf)
  double step = 0.0;
  double loss = 0.0;
};

/// Central finite differences vs analytic gradients at a random point away from hinge kinks,
/// in double precision. all_active draws tiny embeddings so every triplet hinge is active.
GradCheckReport loss_grad_check(Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed,
                                bool all_active = false, double step = 1e-3);

/// Same check carried out in float32 arithmetic (step 1e-2).
GradCheckReport loss_grad_check_f32(Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed,
                                    bool all_active = false);

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

}  // namespace avp::loss
