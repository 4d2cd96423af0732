#include <doctest.h>

#include <cmath>
#include <random>

#include "audio_frontend.hpp"
#include "oracles.hpp"
#include "wav.hpp"

using namespace avp;
using namespace avp::audio;

namespace {

Waveform tone(double hz, int rate, std::size_t n, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = float(amp * std::cos(2.0 * oracle::kPi * hz * double(i) / rate));
  return w;
}

double frobenius_rel(const PowerSpectrogram& p, const Waveform& w) {
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < p.frames; ++t) {
    const auto ref = oracle::frame_power(w.samples.data() + t * p.hop, p.window_size);
    for (std::size_t k = 0; k < p.bins; ++k) {
      num += (p.at(k, t) - ref[k]) * (p.at(k, t) - ref[k]);
      den += ref[k] * ref[k];
    }
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("stft of silence is zero") {
  Waveform w{std::vector<float>(2048, 0.0f), 22050};
  const auto p = stft_power(w, 512, 256);
  CHECK(p.frames == 7);
  for (float v : p.values) CHECK(v == 0.0f);
}

TEST_CASE("stft rejects audio shorter than a window") {
  Waveform w{std::vector<float>(100, 0.1f), 22050};
  CHECK_THROWS_WITH(stft_power(w, 256, 64), doctest::Contains("audio too short"));
}

TEST_CASE("bin-centred cosine concentrates in its bin") {
  const std::size_t n = 1024;
  const int rate = 22050;
  const auto w = tone(4.0 * rate / double(n), rate, n);
  const auto p = stft_power(w, n, n);
  REQUIRE(p.frames == 1);
  const auto ref = oracle::frame_power(w.samples.data(), n);
  double peak = 0.0;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < p.bins; ++k)
    if (p.at(k, 0) > peak) peak = p.at(k, 0), arg = k;
  CHECK(arg == 4);
  for (std::size_t k = 0; k < p.bins; ++k) {
    CHECK(p.at(k, 0) == doctest::Approx(ref[k]).epsilon(1e-4).scale(peak * 1e-9));
    if (k + 1 < 4 || k > 5) CHECK(p.at(k, 0) < 1e-6 * peak);
  }
}

TEST_CASE("impulse frame equals the window spectrum") {
  Waveform w{std::vector<float>(256, 0.0f), 8000};
  w.samples[1] = 1.0f;  // sample 0 is zeroed by the periodic window
  const auto p = stft_power(w, 256, 256);
  const auto ref = oracle::frame_power(w.samples.data(), 256);
  for (std::size_t k = 0; k < p.bins; ++k) CHECK(p.at(k, 0) == doctest::Approx(ref[k]).epsilon(1e-5));
}

TEST_CASE("stft matches a naive DFT on random short inputs") {
  Rng rng(7);
  std::normal_distribution<float> g;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t win = std::size_t{64} << (trial % 4), hop = win / 2;
    const std::size_t frames = 1 + trial % 3;
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(win + (frames - 1) * hop);
    for (auto& s : w.samples) s = g(rng);
    const auto p = stft_power(w, win, hop);
    REQUIRE(p.frames == frames);
    CHECK(frobenius_rel(p, w) < 1e-5);
  }
}

TEST_CASE("mel scale is the HTK formula and strictly increasing") {
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  double prev = -1.0;
  for (double f = 0.0; f <= 11025.0; f += 25.0) {
    const double m = hz_to_mel(f);
    CHECK(m > prev);
    CHECK(mel_to_hz(m) == doctest::Approx(f).scale(1.0));
    prev = m;
  }
}

TEST_CASE("mel band centres match the scalar oracle") {
  const auto fb = build_mel_filterbank(128, 1024, 22050, 0.0, 11025.0);
  const auto ref = oracle::mel_centers(128, 0.0, 11025.0);
  REQUIRE(fb.band_centers.size() == 128);
  for (std::size_t b = 0; b < 128; ++b) CHECK(fb.band_centers[b] == doctest::Approx(ref[b]).epsilon(1e-12));
}

TEST_CASE("filterbank rows are contiguous unimodal triangles ordered by centre") {
  const auto fb = build_mel_filterbank(128, 1024, 22050, 0.0, 11025.0);
  std::size_t prev_peak = 0;
  for (std::size_t b = 0; b < fb.bands; ++b) {
    std::size_t first = fb.bins, last = 0, peak = 0;
    for (std::size_t k = 0; k < fb.bins; ++k) {
      CHECK(fb.at(b, k) >= 0.0f);
      if (fb.at(b, k) > 0.0f) first = std::min(first, k), last = k;
      if (fb.at(b, k) > fb.at(b, peak)) peak = k;
    }
    REQUIRE(first <= last);
    for (std::size_t k = first; k <= last; ++k) CHECK(fb.at(b, k) > 0.0f);
    for (std::size_t k = first; k < peak; ++k) CHECK(fb.at(b, k) <= fb.at(b, k + 1));
    for (std::size_t k = peak; k < last; ++k) CHECK(fb.at(b, k) >= fb.at(b, k + 1));
    CHECK(peak >= prev_peak);
    prev_peak = peak;
    if (b > 0) CHECK(fb.band_centers[b] > fb.band_centers[b - 1]);
  }
}

TEST_CASE("single band spans the whole range with apex at the mel midpoint") {
  const auto fb = build_mel_filterbank(1, 512, 16000, 100.0, 7000.0);
  const double centre = oracle::mel_inv((oracle::mel(100.0) + oracle::mel(7000.0)) / 2.0);
  CHECK(fb.band_centers[0] == doctest::Approx(centre));
  const double bin_hz = 16000.0 / 512.0;
  for (std::size_t k = 0; k < fb.bins; ++k) {
    const double f = k * bin_hz;
    double expect = 0.0;
    if (f > 100.0 && f <= centre) expect = (f - 100.0) / (centre - 100.0);
    else if (f > centre && f < 7000.0) expect = (7000.0 - f) / (7000.0 - centre);
    CHECK(fb.at(0, k) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("filterbank rejects invalid ranges") {
  CHECK_THROWS_AS(build_mel_filterbank(128, 1024, 22050, 500.0, 400.0), Error);
  CHECK_THROWS_AS(build_mel_filterbank(128, 1024, 22050, 0.0, 12000.0), Error);
  CHECK_THROWS_AS(build_mel_filterbank(0, 1024, 22050, 0.0, 11025.0), Error);
}

TEST_CASE("log mel floors at eps and shifts by ln c under scaling") {
  const auto fb = build_mel_filterbank(128, 1024, 22050, 0.0, 11025.0);
  PowerSpectrogram zero;
  zero.bins = fb.bins, zero.frames = 3, zero.window_size = 1024, zero.hop = 512;
  zero.values.assign(zero.bins * 3, 0.0f);
  const auto lz = log_mel(zero, fb, 1e-6f);
  CHECK(lz.bands == 128);
  for (float v : lz.values) CHECK(v == doctest::Approx(std::log(1e-6f)));

  Rng rng(3);
  std::uniform_real_distribution<float> u(1.0f, 2.0f);
  PowerSpectrogram p = zero;
  for (auto& v : p.values) v = u(rng);
  PowerSpectrogram q = p;
  for (auto& v : q.values) v *= 4.0f;
  const auto a = log_mel(p, fb, 1e-6f), b = log_mel(q, fb, 1e-6f);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(b.values[i] - a.values[i] == doctest::Approx(std::log(4.0)).epsilon(1e-5));

  PowerSpectrogram bad = zero;
  bad.bins = 10;
  bad.values.assign(30, 0.0f);
  CHECK_THROWS_AS(log_mel(bad, fb, 1e-6f), Error);
}

TEST_CASE("pure tones land in the band with the nearest centre") {
  FrontendConfig fe;
  const auto centres = oracle::mel_centers(fe.num_bands, 0.0, fe.sample_rate / 2.0);
  auto dominant = [&](double hz) {
    const auto lm = compute_log_mel(tone(hz, fe.sample_rate, fe.sample_rate), fe);
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t b = 0; b < lm.bands; ++b) {
      double s = 0.0;
      for (std::size_t t = 0; t < lm.frames; ++t) s += lm.at(b, t);
      if (s > best_v) best_v = s, best = b;
    }
    return best;
  };
  auto nearest = [&](double hz) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < centres.size(); ++b)
      if (std::fabs(centres[b] - hz) < std::fabs(centres[best] - hz)) best = b;
    return best;
  };
  CHECK(dominant(1000.0) == nearest(1000.0));
  Rng rng(2024);
  std::uniform_real_distribution<double> f(300.0, 8000.0);
  for (int i = 0; i < 10; ++i) {
    const double hz = f(rng);
    CAPTURE(hz);
    CHECK(dominant(hz) == nearest(hz));
  }
}

TEST_CASE("time crops") {
  auto make = [](std::size_t frames) {
    LogMelSpectrogram s;
    s.bands = 4, s.frames = frames;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < frames; ++t) s.values.push_back(float(b * 1000 + t));
    return s;
  };
  SUBCASE("exact length is returned unchanged") {
    const auto s = make(128);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      CHECK(random_time_crop(s, 128, rng).values == s.values);
    }
  }
  SUBCASE("longer input gives a contiguous deterministic window") {
    const auto s = make(200);
    Rng r1(11), r2(11);
    const auto a = random_time_crop(s, 128, r1), b = random_time_crop(s, 128, r2);
    CHECK(a.values == b.values);
    const auto off = std::size_t(a.at(0, 0));
    CHECK(off <= 72);
    for (std::size_t t = 0; t < 128; ++t) CHECK(a.at(2, t) == float(2000 + off + t));
  }
  SUBCASE("short input is tiled cyclically") {
    const auto s = make(50);
    Rng rng(5);
    const auto c = random_time_crop(s, 128, rng);
    CHECK(c.frames == 128);
    const auto off = std::size_t(c.at(0, 0));
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t t = 0; t < 128; ++t) CHECK(c.at(b, t) == s.at(b, (off + t) % 50));
  }
  SUBCASE("centre crop") {
    const auto s = make(200);
    CHECK(center_time_crop(s, 128).at(0, 0) == 36.0f);
    CHECK(center_time_crop(make(50), 128).at(1, 0) == 1000.0f);
  }
}

TEST_CASE("log mel is finite for extreme input") {
  FrontendConfig fe;
  Waveform w{std::vector<float>(30000, 0.0f), fe.sample_rate};
  for (std::size_t i = 0; i < w.samples.size(); i += 2) w.samples[i] = 1.0f;
  const auto lm = compute_log_mel(w, fe);
  CHECK(lm.bands == 128);
  for (float v : lm.values) CHECK(std::isfinite(v));
}

TEST_CASE("linear resampling") {
  Waveform w{{0.0f, 1.0f, 2.0f, 3.0f}, 4};
  const auto up = resample_linear(w, 8);
  CHECK(up.sample_rate == 8);
  REQUIRE(up.samples.size() >= 7);
  CHECK(up.samples[1] == doctest::Approx(0.5f));
  CHECK(up.samples[2] == doctest::Approx(1.0f));
  CHECK(resample_linear(w, 4).samples == w.samples);
}

TEST_CASE("wav round trips") {
  Waveform w{{0.0f, 0.5f, -0.25f, -1.0f, 32767.0f / 32768.0f}, 16000};
  const auto pcm = decode_wav(encode_wav(w, WavEncoding::pcm16));
  CHECK(pcm.sample_rate == 16000);
  CHECK(pcm.samples == w.samples);
  const auto f32 = decode_wav(encode_wav(w, WavEncoding::float32));
  CHECK(f32.samples == w.samples);
  CHECK_THROWS_AS(decode_wav({'R', 'I', 'F', 'F'}), Error);
}
