#pragma once

// Scalar reference implementations shared by the unit and acceptance tests.

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace oracle {

inline constexpr double kPi = 3.14159265358979323846;

inline double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_inv(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// |DFT(frame * periodic hann)|^2 for k = 0..n/2
inline std::vector<double> frame_power(const float* x, std::size_t n) {
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n));
      const double ang = -2.0 * kPi * double(k) * double(i) / double(n);
      acc += double(x[i]) * w * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = std::norm(acc);
  }
  return out;
}

// Band centers at interior points of num_bands + 2 equally spaced mel points.
inline std::vector<double> mel_centers(std::size_t bands, double f_min, double f_max) {
  std::vector<double> c(bands);
  const double lo = mel(f_min), hi = mel(f_max);
  for (std::size_t b = 0; b < bands; ++b) c[b] = mel_inv(lo + (hi - lo) * double(b + 1) / double(bands + 1));
  return c;
}

// Bilinear sample with half-pixel centers, clamped at the window edges; plane is row-major h x w.
inline double bilinear(const float* plane, std::size_t stride, std::size_t y0, std::size_t x0, std::size_t h,
                       std::size_t w, std::size_t out_h, std::size_t out_w, std::size_t oy, std::size_t ox) {
  const double sy = (double(oy) + 0.5) * double(h) / double(out_h) - 0.5;
  const double sx = (double(ox) + 0.5) * double(w) / double(out_w) - 0.5;
  auto clampi = [](double v, std::size_t n) {
    return v < 0 ? std::size_t{0} : (v > double(n - 1) ? n - 1 : std::size_t(v));
  };
  const double cy = std::fmin(std::fmax(sy, 0.0), double(h - 1));
  const double cx = std::fmin(std::fmax(sx, 0.0), double(w - 1));
  const std::size_t ya = clampi(std::floor(cy), h), xa = clampi(std::floor(cx), w);
  const std::size_t yb = std::min(ya + 1, h - 1), xb = std::min(xa + 1, w - 1);
  const double fy = cy - double(ya), fx = cx - double(xa);
  auto px = [&](std::size_t y, std::size_t x) { return double(plane[(y0 + y) * stride + x0 + x]); };
  return (1 - fy) * ((1 - fx) * px(ya, xa) + fx * px(ya, xb)) + fy * ((1 - fx) * px(yb, xa) + fx * px(yb, xb));
}

// Literal double loop over every (diagonal, off-diagonal) pairing, by rows and by columns.
// D[i][j] is the distance between audio i and visual j.
inline double batch_triplet_sum(const std::vector<std::vector<double>>& D, double margin) {
  const std::size_t n = D.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      total += std::fmax(0.0, D[i][i] - D[i][j] + margin);
      total += std::fmax(0.0, D[j][j] - D[i][j] + margin);
    }
  return total;
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace oracle
