#pragma once

#include <cstddef>
#include <vector>

#include "common.hpp"

namespace avp::audio {

struct Waveform {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 0;
};

/// Squared STFT magnitudes, stored row-major as [bins][frames].
struct PowerSpectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::size_t window_size = 0;
  std::size_t hop = 0;
  std::vector<float> values;

  float at(std::size_t k, std::size_t t) const { return values[k * frames + t]; }
};

struct MelFilterbank {
  std::size_t bands = 0;
  std::size_t bins = 0;  // n_fft / 2 + 1
  std::vector<float> weights;        // [bands][bins]
  std::vector<double> band_centers;  // Hz, strictly increasing

  float at(std::size_t b, std::size_t k) const { return weights[b * bins + k]; }
};

/// Natural-log mel energies, row-major [bands][frames].
struct LogMelSpectrogram {
  std::size_t bands = 0;
  std::size_t frames = 0;
  std::vector<float> values;

  float at(std::size_t b, std::size_t t) const { return values[b * frames + t]; }
};

struct FrontendConfig {
  int sample_rate = 22050;
  std::size_t window_size = 1024;
  std::size_t hop = 512;
  std::size_t num_bands = 128;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects sample_rate / 2
  float eps = 1e-6f;
  std::size_t crop_frames = 128;

  bool operator==(const FrontendConfig&) const = default;
  double effective_f_max() const { return f_max > 0.0 ? f_max : sample_rate / 2.0; }
};

// HTK mel scale
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t n);

PowerSpectrogram stft_power(const Waveform& w, std::size_t window_size, std::size_t hop);

MelFilterbank build_mel_filterbank(std::size_t num_bands, std::size_t n_fft, int sample_rate,
                                   double f_min, double f_max);

LogMelSpectrogram log_mel(const PowerSpectrogram& p, const MelFilterbank& fb, float eps);

/// Random window of `frames` consecutive columns. Inputs shorter than `frames` are tiled
/// cyclically, so the output width is always `frames`.
LogMelSpectrogram random_time_crop(const LogMelSpectrogram& s, std::size_t frames, Rng& rng);

/// Deterministic crop used for evaluation: the centered window (offset 0 when tiling).
LogMelSpectrogram center_time_crop(const LogMelSpectrogram& s, std::size_t frames);

/// Cyclic window starting at `offset`.
LogMelSpectrogram time_window(const LogMelSpectrogram& s, std::size_t offset, std::size_t frames);

/// Linear-interpolation resampler.
Waveform resample_linear(const Waveform& w, int target_rate);

/// Waveform -> full-length log-mel spectrogram with the configured front-end.
LogMelSpectrogram compute_log_mel(const Waveform& w, const FrontendConfig& cfg);

}  // namespace avp::audio
