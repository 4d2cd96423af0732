#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace avp {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
};

/// Row-major n x d matrix of embeddings.
template <typename T>
struct Embeddings {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<T> values;

  Embeddings() = default;
  Embeddings(std::size_t n, std::size_t d, T fill = T(0)) : rows(n), dim(d), values(n * d, fill) {}

  T* row(std::size_t i) { return values.data() + i * dim; }
  const T* row(std::size_t i) const { return values.data() + i * dim; }
  T& at(std::size_t i, std::size_t j) { return values[i * dim + j]; }
  T at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace avp
