#include "audio_frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

namespace avp::audio {

namespace {

// The FFTW planner is not thread-safe; plans are created once per size and executed
// with the new-array interface, which is.
struct PlanCache {
  std::mutex mu;
  std::map<std::size_t, fftw_plan> plans;

  fftw_plan get(std::size_t n) {
    std::lock_guard<std::mutex> lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans.emplace(n, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [n, plan] : plans) fftw_destroy_plan(plan);
  }
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

PowerSpectrogram stft_power(const Waveform& w, std::size_t window_size, std::size_t hop) {
  if (window_size < 2) throw Error(Errc::invalid_argument, "window_size must be at least 2");
  if (hop < 1) throw Error(Errc::invalid_argument, "hop must be at least 1");
  if (w.samples.size() < window_size) throw Error(Errc::invalid_argument, "audio too short");

  PowerSpectrogram p;
  p.window_size = window_size;
  p.hop = hop;
  p.bins = window_size / 2 + 1;
  p.frames = (w.samples.size() - window_size) / hop + 1;
  p.values.assign(p.bins * p.frames, 0.0f);

  const auto window = hann_window(window_size);
  fftw_plan plan = plan_cache().get(window_size);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(window_size));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(p.bins));

  for (std::size_t t = 0; t < p.frames; ++t) {
    const float* frame = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < window_size; ++i) in.get()[i] = frame[i] * window[i];
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t k = 0; k < p.bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      p.values[k * p.frames + t] = static_cast<float>(re * re + im * im);
    }
  }
  return p;
}

MelFilterbank build_mel_filterbank(std::size_t num_bands, std::size_t n_fft, int sample_rate,
                                   double f_min, double f_max) {
  if (num_bands < 1) throw Error(Errc::invalid_argument, "num_bands must be at least 1");
  if (n_fft < 2) throw Error(Errc::invalid_argument, "n_fft must be at least 2");
  if (sample_rate <= 0) throw Error(Errc::invalid_argument, "sample_rate must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw Error(Errc::invalid_argument, "invalid mel frequency range: need 0 <= f_min < f_max <= sample_rate/2");

  MelFilterbank fb;
  fb.bands = num_bands;
  fb.bins = n_fft / 2 + 1;
  fb.weights.assign(fb.bands * fb.bins, 0.0f);
  fb.band_centers.resize(num_bands);

  // num_bands + 2 edge points equally spaced in mel; band b spans points b .. b+2
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(num_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(num_bands + 1));

  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  for (std::size_t b = 0; b < num_bands; ++b) {
    const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
    fb.band_centers[b] = center;
    bool any = false;
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double wgt = 0.0;
      if (f > left && f <= center)
        wgt = (f - left) / (center - left);
      else if (f > center && f < right)
        wgt = (right - f) / (right - center);
      if (wgt > 0.0) {
        fb.weights[b * fb.bins + k] = static_cast<float>(wgt);
        any = true;
      }
    }
    if (!any)
      throw Error(Errc::invalid_argument,
                  "mel band " + std::to_string(b) + " covers no FFT bin; use fewer bands or a larger n_fft");
  }
  return fb;
}

LogMelSpectrogram log_mel(const PowerSpectrogram& p, const MelFilterbank& fb, float eps) {
  if (fb.bins != p.bins)
    throw Error(Errc::invalid_argument, "filterbank has " + std::to_string(fb.bins) +
                                            " bins but spectrogram has " + std::to_string(p.bins));
  if (!(eps > 0.0f)) throw Error(Errc::invalid_argument, "eps must be positive");

  LogMelSpectrogram out;
  out.bands = fb.bands;
  out.frames = p.frames;
  out.values.assign(out.bands * out.frames, 0.0f);
  std::vector<double> acc(p.frames);
  for (std::size_t b = 0; b < fb.bands; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const double wgt = fb.at(b, k);
      if (wgt == 0.0) continue;
      const float* row = p.values.data() + k * p.frames;
      for (std::size_t t = 0; t < p.frames; ++t) acc[t] += wgt * row[t];
    }
    float* dst = out.values.data() + b * out.frames;
    for (std::size_t t = 0; t < p.frames; ++t)
      dst[t] = static_cast<float>(std::log(std::max(acc[t], static_cast<double>(eps))));
  }
  return out;
}

LogMelSpectrogram time_window(const LogMelSpectrogram& s, std::size_t offset, std::size_t frames) {
  if (s.frames == 0) throw Error(Errc::invalid_argument, "spectrogram has no frames");
  LogMelSpectrogram out;
  out.bands = s.bands;
  out.frames = frames;
  out.values.resize(out.bands * frames);
  for (std::size_t b = 0; b < s.bands; ++b)
    for (std::size_t t = 0; t < frames; ++t)
      out.values[b * frames + t] = s.values[b * s.frames + (offset + t) % s.frames];
  return out;
}

LogMelSpectrogram random_time_crop(const LogMelSpectrogram& s, std::size_t frames, Rng& rng) {
  if (s.frames == 0) throw Error(Errc::invalid_argument, "spectrogram has no frames");
  const std::size_t max_offset = s.frames >= frames ? s.frames - frames : s.frames - 1;
  std::uniform_int_distribution<std::size_t> pick(0, max_offset);
  return time_window(s, pick(rng), frames);
}

LogMelSpectrogram center_time_crop(const LogMelSpectrogram& s, std::size_t frames) {
  const std::size_t offset = s.frames >= frames ? (s.frames - frames) / 2 : 0;
  return time_window(s, offset, frames);
}

Waveform resample_linear(const Waveform& w, int target_rate) {
  if (w.sample_rate <= 0 || target_rate <= 0) throw Error(Errc::invalid_argument, "sample rates must be positive");
  if (w.sample_rate == target_rate || w.samples.empty()) return {w.samples, target_rate};

  const double ratio = static_cast<double>(w.sample_rate) / static_cast<double>(target_rate);
  const auto out_len = static_cast<std::size_t>(
      std::floor(static_cast<double>(w.samples.size()) * target_rate / w.sample_rate));
  Waveform out{std::vector<float>(std::max<std::size_t>(out_len, 1)), target_rate};
  const std::size_t last = w.samples.size() - 1;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(pos), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = static_cast<float>(w.samples[i0] + frac * (w.samples[i1] - w.samples[i0]));
  }
  return out;
}

LogMelSpectrogram compute_log_mel(const Waveform& w, const FrontendConfig& cfg) {
  Waveform resampled = w.sample_rate == cfg.sample_rate ? w : resample_linear(w, cfg.sample_rate);
  const auto fb = build_mel_filterbank(cfg.num_bands, cfg.window_size, cfg.sample_rate, cfg.f_min,
                                       cfg.effective_f_max());
  return log_mel(stft_power(resampled, cfg.window_size, cfg.hop), fb, cfg.eps);
}

}  // namespace avp::audio
