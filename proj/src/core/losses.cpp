#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace avp::loss {

const char* to_string(Kind k) {
  switch (k) {
    case Kind::batch_triplet: return "batch-triplet";
    case Kind::naive_triplet: return "naive-triplet";
    case Kind::contrastive: return "contrastive";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  if (s == "batch-triplet") return Kind::batch_triplet;
  if (s == "naive-triplet") return Kind::naive_triplet;
  if (s == "contrastive") return Kind::contrastive;
  throw Error(Errc::invalid_argument,
              "unknown loss kind '" + s + "' (expected batch-triplet, naive-triplet or contrastive)");
}

const char* to_string(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

Reduction parse_reduction(const std::string& s) {
  if (s == "sum") return Reduction::sum;
  if (s == "mean") return Reduction::mean;
  throw Error(Errc::invalid_argument, "unknown reduction '" + s + "' (expected sum or mean)");
}

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw Error(Errc::invalid_argument, "margin must be positive");
  if (!(temperature > 0.0)) throw Error(Errc::invalid_argument, "temperature must be positive");
}

namespace {

template <typename T>
void check_pair(const Embeddings<T>& V, const Embeddings<T>& A) {
  if (V.rows != A.rows || V.dim != A.dim)
    throw Error(Errc::invalid_argument, "visual and audio embeddings must have identical shapes");
  if (V.rows == 0) throw Error(Errc::invalid_argument, "embedding batch is empty");
}

template <typename T>
T distance(const T* x, const T* y, std::size_t d) {
  T acc = 0;
  for (std::size_t k = 0; k < d; ++k) acc += (x[k] - y[k]) * (x[k] - y[k]);
  return std::sqrt(acc);
}

// Adds coeff * d||x - y|| / dx to gx and the negation to gy; zero at x == y.
template <typename T>
void distance_backward(const T* x, const T* y, std::size_t d, T dist, T coeff, T* gx, T* gy) {
  if (dist <= T(0) || coeff == T(0)) return;
  const T s = coeff / dist;
  for (std::size_t k = 0; k < d; ++k) {
    const T u = s * (x[k] - y[k]);
    gx[k] += u;
    gy[k] -= u;
  }
}

}  // namespace

template <typename T>
Embeddings<T> pairwise_distance_matrix(const Embeddings<T>& V, const Embeddings<T>& A) {
  check_pair(V, A);
  const std::size_t n = V.rows;
  Embeddings<T> D(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) D.at(i, j) = distance(A.row(i), V.row(j), V.dim);
  return D;
}

template <typename T>
T naive_triplet_loss(const T* x, const T* y_pos, const T* y_neg, std::size_t dim, T margin) {
  return std::max(T(0), distance(x, y_pos, dim) - distance(x, y_neg, dim) + margin);
}

template <typename T>
LossResult<T> batch_triplet_loss(const Embeddings<T>& V, const Embeddings<T>& A, const LossConfig& cfg) {
  cfg.validate();
  const Embeddings<T> D = pairwise_distance_matrix(V, A);
  const std::size_t n = V.rows, d = V.dim;
  const T m = static_cast<T>(cfg.margin);

  LossResult<T> r{0, Embeddings<T>(n, d), Embeddings<T>(n, d), 0, 2 * n * (n - 1)};
  Embeddings<T> G(n, n);  // dLoss/dD before reduction scaling
  double off = 0.0;
  for (std::size_t i = 0; i < n; ++i)  // row terms: diagonal of row i vs its off-diagonals
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const T h = D.at(i, i) - D.at(i, j) + m;
      if (h > T(0)) {
        off += h;
        G.at(i, i) += 1;
        G.at(i, j) -= 1;
        ++r.active_terms;
      }
    }
  for (std::size_t j = 0; j < n; ++j)  // column terms: diagonal of column j vs its off-diagonals
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      const T h = D.at(j, j) - D.at(i, j) + m;
      if (h > T(0)) {
        off += h;
        G.at(j, j) += 1;
        G.at(i, j) -= 1;
        ++r.active_terms;
      }
    }
  double diag = 0.0;
  if (cfg.include_diagonal) {
    // each of the 2n diagonal terms is relu(D_ii - D_ii + m) = m; the +1/-1 gradient contributions cancel
    diag = static_cast<double>(2 * n) * static_cast<double>(m);
  }

  const double scale = (cfg.reduction == Reduction::mean && n > 1) ? 1.0 / static_cast<double>(n * (n - 1)) : 1.0;
  // added after rounding so the diagonal-inclusive value is exactly the plain value + 2n m in T
  r.loss = static_cast<T>(off * scale) + static_cast<T>(diag * scale);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      distance_backward(A.row(i), V.row(j), d, D.at(i, j), static_cast<T>(G.at(i, j) * scale), r.grad_a.row(i),
                        r.grad_v.row(j));
  return r;
}

std::vector<std::size_t> sample_negatives(std::size_t n, Rng& rng) {
  if (n < 2) throw Error(Errc::invalid_argument, "naive triplet sampling needs a batch of at least 2");
  std::vector<std::size_t> neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
    neg[i] = j >= i ? j + 1 : j;
  }
  return neg;
}

template <typename T>
LossResult<T> naive_triplet_batch_loss(const Embeddings<T>& V, const Embeddings<T>& A,
                                       const std::vector<std::size_t>& negatives, const LossConfig& cfg) {
  cfg.validate();
  check_pair(V, A);
  const std::size_t n = V.rows, d = V.dim;
  if (negatives.size() != n) throw Error(Errc::invalid_argument, "need one negative index per anchor");
  const T m = static_cast<T>(cfg.margin);
  const double scale = cfg.reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;

  LossResult<T> r{0, Embeddings<T>(n, d), Embeddings<T>(n, d), 0, n};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = negatives[i];
    if (k >= n || k == i) throw Error(Errc::invalid_argument, "negative index must differ from its anchor");
    const T dp = distance(V.row(i), A.row(i), d), dn = distance(V.row(i), A.row(k), d);
    const T h = dp - dn + m;
    if (h <= T(0)) continue;
    total += h;
    ++r.active_terms;
    const T s = static_cast<T>(scale);
    distance_backward(V.row(i), A.row(i), d, dp, s, r.grad_v.row(i), r.grad_a.row(i));
    distance_backward(V.row(i), A.row(k), d, dn, -s, r.grad_v.row(i), r.grad_a.row(k));
  }
  r.loss = static_cast<T>(total * scale);
  return r;
}

template <typename T>
Embeddings<T> l2_normalize_rows(const Embeddings<T>& X) {
  Embeddings<T> out = X;
  for (std::size_t i = 0; i < X.rows; ++i) {
    T norm = 0;
    for (std::size_t k = 0; k < X.dim; ++k) norm += X.at(i, k) * X.at(i, k);
    norm = std::sqrt(norm);
    if (!(norm > T(0)) || !std::isfinite(norm)) throw Error(Errc::numeric, "degenerate embedding");
    for (std::size_t k = 0; k < X.dim; ++k) out.at(i, k) /= norm;
  }
  return out;
}

template <typename T>
LossResult<T> contrastive_loss(const Embeddings<T>& V, const Embeddings<T>& A, const LossConfig& cfg) {
  cfg.validate();
  check_pair(V, A);
  const std::size_t n = V.rows, d = V.dim;
  if (n < 2) throw Error(Errc::invalid_argument, "contrastive loss needs a batch of at least 2");
  const Embeddings<T> vh = l2_normalize_rows(V), ah = l2_normalize_rows(A);
  const double tau = cfg.temperature;

  std::vector<double> S(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(vh.at(i, k)) * ah.at(j, k);
      S[i * n + j] = acc / tau;
    }

  // row softmax P (visual query over audio keys), column softmax Q (audio query over visual keys)
  std::vector<double> P(n * n), Q(n * n);
  double loss_va = 0.0, loss_av = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, S[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(S[i * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = std::exp(S[i * n + j] - mx) / z;
    loss_va += -S[i * n + i] + mx + std::log(z);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, S[i * n + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(S[i * n + j] - mx);
    for (std::size_t i = 0; i < n; ++i) Q[i * n + j] = std::exp(S[i * n + j] - mx) / z;
    loss_av += -S[j * n + j] + mx + std::log(z);
  }

  LossResult<T> r{static_cast<T>(0.5 * (loss_va + loss_av) / static_cast<double>(n)), Embeddings<T>(n, d),
                  Embeddings<T>(n, d), 0, 2 * n};
  r.active_terms = 2 * n;

  // dL/dS, then through S = <vh, ah> / tau and the normalizations
  std::vector<double> dvh(n * d, 0.0), dah(n * d, 0.0);
  const double c = 0.5 / static_cast<double>(n) / tau;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = c * (P[i * n + j] + Q[i * n + j] - (i == j ? 2.0 : 0.0));
      for (std::size_t k = 0; k < d; ++k) {
        dvh[i * d + k] += g * ah.at(j, k);
        dah[j * d + k] += g * vh.at(i, k);
      }
    }
  auto through_norm = [&](const Embeddings<T>& raw, const Embeddings<T>& unit, const std::vector<double>& du,
                          Embeddings<T>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0, proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        norm += static_cast<double>(raw.at(i, k)) * raw.at(i, k);
        proj += unit.at(i, k) * du[i * d + k];
      }
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < d; ++k) out.at(i, k) = static_cast<T>((du[i * d + k] - unit.at(i, k) * proj) / norm);
    }
  };
  through_norm(V, vh, dvh, r.grad_v);
  through_norm(A, ah, dah, r.grad_a);
  return r;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return diff / scale;
}

namespace {

// Smallest |hinge argument| and smallest distance at this point; FD steps must stay clear of both.
template <typename T>
std::pair<double, double> kink_clearance(Kind kind, const Embeddings<T>& V, const Embeddings<T>& A,
                                         const std::vector<std::size_t>& neg, double margin) {
  double hinge = INFINITY, dist = INFINITY;
  const std::size_t n = V.rows;
  if (kind == Kind::batch_triplet) {
    const auto D = pairwise_distance_matrix(V, A);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        dist = std::min(dist, static_cast<double>(D.at(i, j)));
        if (i == j) continue;
        hinge = std::min(hinge, std::fabs(static_cast<double>(D.at(i, i) - D.at(i, j)) + margin));
        hinge = std::min(hinge, std::fabs(static_cast<double>(D.at(j, j) - D.at(i, j)) + margin));
      }
  } else if (kind == Kind::naive_triplet) {
    for (std::size_t i = 0; i < n; ++i) {
      const double dp = distance(V.row(i), A.row(i), V.dim), dn = distance(V.row(i), A.row(neg[i]), V.dim);
      dist = std::min({dist, dp, dn});
      hinge = std::min(hinge, std::fabs(dp - dn + margin));
    }
  }
  return {hinge, dist};
}

template <typename T>
GradCheckReport grad_check_impl(Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed, bool all_active,
                                double step) {
  LossConfig cfg;
  Rng rng(seed);
  Embeddings<T> V(n, dim), A(n, dim);
  std::vector<std::size_t> neg;
  const double scale = all_active ? 0.05 : 1.0;
  for (int attempt = 0;; ++attempt) {
    std::normal_distribution<double> g(0.0, scale);
    for (auto& x : V.values) x = static_cast<T>(g(rng));
    for (auto& x : A.values) x = static_cast<T>(g(rng));
    neg = n >= 2 ? sample_negatives(n, rng) : std::vector<std::size_t>{};
    const auto [hinge, dist] = kink_clearance(kind, V, A, neg, cfg.margin);
    if (hinge > 4 * step && dist > 4 * step) break;
    if (attempt > 10000) throw Error(Errc::numeric, "could not find a point away from hinge kinks");
  }

  auto eval = [&](const Embeddings<T>& v, const Embeddings<T>& a) -> LossResult<T> {
    switch (kind) {
      case Kind::batch_triplet: return batch_triplet_loss(v, a, cfg);
      case Kind::naive_triplet: return naive_triplet_batch_loss(v, a, neg, cfg);
      case Kind::contrastive: return contrastive_loss(v, a, cfg);
    }
    throw Error(Errc::invalid_argument, "unknown loss kind");
  };

  const auto base = eval(V, A);
  GradCheckReport rep{to_string(kind), n, dim, 0.0, step, static_cast<double>(base.loss)};
  for (int which = 0; which < 2; ++which) {
    Embeddings<T>& X = which == 0 ? V : A;
    const Embeddings<T>& G = which == 0 ? base.grad_v : base.grad_a;
    std::vector<double> analytic(G.values.begin(), G.values.end()), numeric(X.values.size());
    for (std::size_t k = 0; k < X.values.size(); ++k) {
      const T orig = X.values[k];
      X.values[k] = static_cast<T>(orig + step);
      const double up = eval(V, A).loss;
      X.values[k] = static_cast<T>(orig - step);
      const double down = eval(V, A).loss;
      X.values[k] = orig;
      numeric[k] = (up - down) / (2.0 * step);
    }
    rep.max_rel_error = std::max(rep.max_rel_error, max_relative_error(analytic, numeric));
  }
  return rep;
}

}  // namespace

GradCheckReport loss_grad_check(Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed, bool all_active,
                                double step) {
  return grad_check_impl<double>(kind, n, dim, seed, all_active, step);
}

GradCheckReport loss_grad_check_f32(Kind kind, std::size_t n, std::size_t dim, std::uint64_t seed, bool all_active) {
  return grad_check_impl<float>(kind, n, dim, seed, all_active, 1e-2);
}

#define AVP_INSTANTIATE(T)                                                                                   \
  template Embeddings<T> pairwise_distance_matrix<T>(const Embeddings<T>&, const Embeddings<T>&);            \
  template T naive_triplet_loss<T>(const T*, const T*, const T*, std::size_t, T);                           \
  template LossResult<T> batch_triplet_loss<T>(const Embeddings<T>&, const Embeddings<T>&, const LossConfig&); \
  template LossResult<T> naive_triplet_batch_loss<T>(const Embeddings<T>&, const Embeddings<T>&,             \
                                                     const std::vector<std::size_t>&, const LossConfig&);   \
  template LossResult<T> contrastive_loss<T>(const Embeddings<T>&, const Embeddings<T>&, const LossConfig&);  \
  template Embeddings<T> l2_normalize_rows<T>(const Embeddings<T>&);

AVP_INSTANTIATE(float)
AVP_INSTANTIATE(double)
#undef AVP_INSTANTIATE

}  // namespace avp::loss
