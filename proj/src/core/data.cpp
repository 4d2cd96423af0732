#include "data.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "wav.hpp"

namespace fs = std::filesystem;

namespace avp::data {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::invalid_argument, "unknown split '" + s + "' (expected train, val or test)");
}

Split hash_split(const std::string& id) {
  const auto bucket = fnv1a(id) % 100;
  if (bucket < 90) return Split::train;
  return bucket < 95 ? Split::val : Split::test;
}

std::vector<ManifestEntry> Manifest::select(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

std::string Manifest::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

namespace {

struct Row {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

// RFC 4180 style: quoted fields may hold commas, doubled quotes and line breaks.
std::vector<Row> split_csv(const std::string& text) {
  std::vector<Row> rows;
  std::size_t i = 0, line = 1;
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) i = 3;
  while (i < text.size()) {
    Row row;
    row.line = line;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (;;) {
      if (i >= text.size()) {
        if (quoted) throw Error(Errc::format, "manifest line " + std::to_string(row.line) + ": unterminated quote");
        row.fields.push_back(std::move(field));
        break;
      }
      const char ch = text[i++];
      if (quoted) {
        if (ch == '"') {
          if (i < text.size() && text[i] == '"') {
            field += '"';
            ++i;
          } else {
            quoted = false;
          }
        } else {
          if (ch == '\n') ++line;
          field += ch;
        }
        continue;
      }
      if (ch == '"') {
        if (!field.empty() || was_quoted)
          throw Error(Errc::format, "manifest line " + std::to_string(line) + ": stray quote inside field");
        quoted = was_quoted = true;
      } else if (ch == ',') {
        row.fields.push_back(std::move(field));
        field.clear();
        was_quoted = false;
      } else if (ch == '\n' || ch == '\r') {
        if (ch == '\r' && i < text.size() && text[i] == '\n') ++i;
        ++line;
        row.fields.push_back(std::move(field));
        break;
      } else {
        if (was_quoted)
          throw Error(Errc::format, "manifest line " + std::to_string(line) + ": text after closing quote");
        field += ch;
      }
    }
    if (!(row.fields.size() == 1 && row.fields[0].empty())) rows.push_back(std::move(row));
  }
  return rows;
}

double parse_coord(const std::string& s, std::size_t line, const char* name, double limit) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw Error(Errc::format, "manifest line " + std::to_string(line) + ": " + name + " '" + s + "' is not a number");
  if (v < -limit || v > limit)
    throw Error(Errc::invalid_argument, "manifest line " + std::to_string(line) + ": " + name + " " + s +
                                            " outside [-" + std::to_string(static_cast<int>(limit)) + ", " +
                                            std::to_string(static_cast<int>(limit)) + "]");
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::string& base_dir) {
  auto rows = split_csv(text);
  if (rows.empty()) throw Error(Errc::format, "manifest is empty (missing header)");
  std::string header;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) header += (i ? "," : "") + rows[0].fields[i];
  if (header != kManifestHeader)
    throw Error(Errc::format, "manifest line 1: header must be '" + std::string(kManifestHeader) + "'");

  Manifest m;
  m.base_dir = base_dir;
  std::vector<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    const std::size_t line = rows[r].line;
    if (f.size() != 7)
      throw Error(Errc::format, "manifest line " + std::to_string(line) + ": expected 7 fields, got " +
                                    std::to_string(f.size()));
    ManifestEntry e;
    e.id = f[0];
    if (e.id.empty()) throw Error(Errc::format, "manifest line " + std::to_string(line) + ": empty id");
    e.audio_path = f[1];
    e.image_path = f[2];
    if (e.audio_path.empty() || e.image_path.empty())
      throw Error(Errc::format, "manifest line " + std::to_string(line) + ": missing file path");
    e.longitude = parse_coord(f[3], line, "longitude", 180.0);
    e.latitude = parse_coord(f[4], line, "latitude", 90.0);
    try {
      e.split = f[5].empty() ? hash_split(e.id) : parse_split(f[5]);
    } catch (const Error& err) {
      throw Error(Errc::format, "manifest line " + std::to_string(line) + ": " + err.what());
    }
    e.attribution = f[6];
    seen.push_back(e.id);
    m.entries.push_back(std::move(e));
  }
  std::vector<std::size_t> order(seen.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return seen[a] < seen[b]; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (seen[order[i]] == seen[order[i - 1]])
      throw Error(Errc::format, "manifest line " + std::to_string(rows[order[i] + 1].line) + ": duplicate id '" +
                                    seen[order[i]] + "'");
  return m;
}

Manifest load_manifest(const std::string& path) {
  const auto text = read_text_file(path);
  const auto parent = fs::path(path).parent_path();
  return parse_manifest(text, parent.empty() ? "." : parent.string());
}

std::string format_manifest(const Manifest& m) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& e : m.entries) {
    out += csv_field(e.id) + "," + csv_field(e.audio_path) + "," + csv_field(e.image_path) + "," +
           format_double(e.longitude) + "," + format_double(e.latitude) + "," + to_string(e.split) + "," +
           csv_field(e.attribution) + "\n";
  }
  return out;
}

void write_manifest(const std::string& path, const Manifest& m) { write_text_file(path, format_manifest(m)); }

std::string class_of(const std::string& id) { return id.substr(0, id.find('_')); }

Pair load_pair(const Manifest& m, const ManifestEntry& e, int sample_rate) {
  try {
    Pair p;
    p.image = image::read_image(m.resolve(e.image_path));
    const auto w = audio::read_wav(m.resolve(e.audio_path));
    p.audio = w.sample_rate == sample_rate ? w : audio::resample_linear(w, sample_rate);
    return p;
  } catch (const Error& err) {
    throw Error(err.code(), "entry '" + e.id + "': " + err.what());
  }
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw Error(Errc::invalid_argument, "synthetic data needs at least 2 classes");
  if (train_per_class + test_per_class == 0) throw Error(Errc::invalid_argument, "synthetic data needs pairs");
  if (image_size < 4) throw Error(Errc::invalid_argument, "synthetic image_size must be at least 4");
  if (sample_rate < 8000) throw Error(Errc::invalid_argument, "synthetic sample_rate must be at least 8000");
  if (!(duration > 0.0)) throw Error(Errc::invalid_argument, "synthetic duration must be positive");
  if (image_noise < 0.0 || audio_noise < 0.0) throw Error(Errc::invalid_argument, "noise levels must be nonnegative");
  if (fingerprint && num_classes * (train_per_class + test_per_class) > kMaxFingerprints)
    throw Error(Errc::invalid_argument, "fingerprint mode supports at most " + std::to_string(kMaxFingerprints) +
                                            " entries");
}

ClassParams class_params(const SynthSpec& spec, std::size_t k) {
  const double t = static_cast<double>(k) / static_cast<double>(spec.num_classes - 1);
  const double lo = audio::hz_to_mel(200.0), hi = audio::hz_to_mel(2000.0);
  return {static_cast<double>(k) / static_cast<double>(spec.num_classes), 6.0 * std::pow(1.2, static_cast<double>(k)),
          audio::mel_to_hz(lo + t * (hi - lo))};
}

float fingerprint_level(std::size_t ordinal) { return static_cast<float>(ordinal + 1) / 96.0f; }

std::size_t fingerprint_band(std::size_t ordinal) { return 30 + ordinal; }

namespace {

double fingerprint_frequency(std::size_t ordinal, int sample_rate) {
  const audio::FrontendConfig fe;
  const double mel_hi = audio::hz_to_mel(sample_rate / 2.0);
  const double step = mel_hi / static_cast<double>(fe.num_bands + 1);
  return audio::mel_to_hz(step * static_cast<double>(fingerprint_band(ordinal) + 1));
}

void hsv_pixel(double h, double s, double v, double rgb[3]) {
  float r, g, b;
  image::hsv_to_rgb({static_cast<float>(h), static_cast<float>(s), static_cast<float>(v)}, r, g, b);
  rgb[0] = r, rgb[1] = g, rgb[2] = b;
}

}  // namespace

image::ImageTensor synth_image(const SynthSpec& spec, std::size_t k, double u, std::uint64_t seed) {
  const auto cp = class_params(spec, k);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double theta = unif(rng) * std::numbers::pi, phase = unif(rng) * 2.0 * std::numbers::pi;
  const double freq = cp.texture * (0.9 + 0.2 * u);
  double base[3];
  hsv_pixel(cp.hue, 0.65, 0.7, base);
  const std::size_t n = spec.image_size;
  const double omega = 2.0 * std::numbers::pi * freq / static_cast<double>(n);
  const double cs = std::cos(theta), sn = std::sin(theta);
  std::normal_distribution<double> noise(0.0, spec.image_noise);
  image::ImageTensor img(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double s = std::sin(omega * (cs * static_cast<double>(x) + sn * static_cast<double>(y)) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base[c] * (1.0 + 0.4 * s) + (spec.image_noise > 0.0 ? noise(rng) : 0.0);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

audio::Waveform synth_audio(const SynthSpec& spec, std::size_t k, double u, std::uint64_t seed) {
  const auto cp = class_params(spec, k);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
  constexpr int kHarmonics = 5;
  double phases[kHarmonics];
  for (double& p : phases) p = unif(rng);
  const double am_phase = unif(rng);
  const double am_rate = 1.5 + 6.0 * u;  // Hz
  double norm = 0.0;
  for (int h = 1; h <= kHarmonics; ++h) norm += 1.0 / (h * h);
  std::normal_distribution<double> noise(0.0, spec.audio_noise);
  audio::Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.resize(static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate)));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    double harm = 0.0;
    for (int h = 1; h <= kHarmonics; ++h)
      if (h * cp.fundamental < spec.sample_rate / 2.0)
        harm += std::sin(2.0 * std::numbers::pi * h * cp.fundamental * t + phases[h - 1]) / (h * h);
    const double env = (1.0 + 0.6 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase)) / 1.6;
    const double v = 0.4 * env * harm / norm + (spec.audio_noise > 0.0 ? noise(rng) : 0.0);
    w.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return w;
}

Manifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  try {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "audio");
  } catch (const fs::filesystem_error& e) {
    throw Error(Errc::io, std::string("cannot create output directories: ") + e.what());
  }
  const std::size_t per_class = spec.train_per_class + spec.test_per_class;
  const char* ext = spec.image_format == ImageFormat::png ? ".png" : ".ppm";

  Manifest m;
  m.base_dir = out_dir;
  m.entries.resize(spec.num_classes * per_class);
  std::vector<double> latents(m.entries.size());
  for (std::size_t k = 0; k < spec.num_classes; ++k)
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t ord = k * per_class + j;
      char id[64];
      std::snprintf(id, sizeof id, "class%02zu_p%04zu", k, j);
      Rng rng(derive_seed(spec.seed, k, j, 0));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      auto& e = m.entries[ord];
      e.id = id;
      e.audio_path = std::string("audio/") + id + ".wav";
      e.image_path = std::string("images/") + id + ext;
      latents[ord] = unif(rng);
      e.longitude = std::round((unif(rng) * 360.0 - 180.0) * 1e4) / 1e4;
      e.latitude = std::round((unif(rng) * 180.0 - 90.0) * 1e4) / 1e4;
      e.split = j < spec.train_per_class ? Split::train : Split::test;
      e.attribution = "synthetic";
    }

  parallel_for(m.entries.size(), default_threads(), [&](std::size_t ord) {
    const auto& e = m.entries[ord];
    const std::size_t k = ord / per_class, j = ord % per_class;
    image::ImageTensor img;
    audio::Waveform w;
    if (spec.fingerprint) {
      img = image::ImageTensor(spec.image_size, spec.image_size, 0.5f);
      std::fill_n(img.values.begin(), spec.image_size * spec.image_size, fingerprint_level(ord));
      w.sample_rate = spec.sample_rate;
      w.samples.resize(static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate)));
      const double f = fingerprint_frequency(ord, spec.sample_rate);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * f * i / spec.sample_rate));
    } else {
      img = synth_image(spec, k, latents[ord], derive_seed(spec.seed, k, j, 1));
      w = synth_audio(spec, k, latents[ord], derive_seed(spec.seed, k, j, 2));
    }
    const auto image_path = m.resolve(e.image_path);
    if (spec.image_format == ImageFormat::png)
      image::write_png(image_path, img);
    else
      write_file(image_path, image::encode_ppm(img));
    audio::write_wav(m.resolve(e.audio_path), w, audio::WavEncoding::pcm16);
  });
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), m);
  return m;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (count == 0) throw Error(Errc::invalid_argument, "cannot batch an empty split");
  if (batch_size == 0 || batch_size > count)
    throw Error(Errc::invalid_argument, "batch_size " + std::to_string(batch_size) + " must be in [1, " +
                                            std::to_string(count) + "]");
  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, epoch, 0, 0xba7c4));
  // Fisher-Yates with an explicit bounded draw
  for (std::size_t i = count - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + batch_size <= count; b += batch_size)
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                     perm.begin() + static_cast<std::ptrdiff_t>(b + batch_size));
  return out;
}

DataSource::DataSource(const Manifest& m, Split split, const audio::FrontendConfig& fe, std::size_t threads,
                       bool skip_bad)
    : fe_(fe) {
  load(m, m.select(split), threads, skip_bad);
}

DataSource::DataSource(const Manifest& m, const std::vector<ManifestEntry>& entries,
                       const audio::FrontendConfig& fe, std::size_t threads, bool skip_bad)
    : fe_(fe) {
  load(m, entries, threads, skip_bad);
}

void DataSource::load(const Manifest& m, const std::vector<ManifestEntry>& entries, std::size_t threads,
                      bool skip_bad) {
  const std::size_t n = entries.size();
  std::vector<image::ImageTensor> halves(n);
  std::vector<audio::LogMelSpectrogram> mels(n);
  std::vector<std::string> errors(n);
  std::vector<bool> ok(n, false);
  parallel_for(n, threads, [&](std::size_t i) {
    try {
      auto pair = load_pair(m, entries[i], fe_.sample_rate);
      halves[i] = image::center_crop_half(pair.image);
      mels[i] = audio::compute_log_mel(pair.audio, fe_);
      ok[i] = true;
    } catch (const Error& e) {
      if (!skip_bad) throw;
      errors[i] = e.what();
    }
  });
  // results land in per-index slots, so the order is the manifest order whatever the worker count
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) {
      skipped_.push_back(entries[i].id + ": " + errors[i]);
      continue;
    }
    ids_.push_back(entries[i].id);
    halves_.push_back(std::move(halves[i]));
    mels_.push_back(std::move(mels[i]));
  }
}

namespace {

PairBatch alloc_batch(std::size_t n, std::size_t side, std::size_t bands, std::size_t frames) {
  PairBatch b;
  b.images = Tensor<float>({n, 3, side, side});
  b.spectrograms = Tensor<float>({n, 1, bands, frames});
  b.ids.resize(n);
  return b;
}

}  // namespace

PairBatch DataSource::train_batch(const std::vector<std::size_t>& idx, const image::AugmentConfig& aug,
                                  std::uint64_t seed, std::uint64_t step, std::size_t threads) const {
  aug.validate();
  const std::size_t side = aug.out_size, frames = fe_.crop_frames;
  auto b = alloc_batch(idx.size(), side, fe_.num_bands, frames);
  const std::size_t isz = 3 * side * side, asz = fe_.num_bands * frames;
  parallel_for(idx.size(), threads, [&](std::size_t i) {
    const std::size_t e = idx.at(i);
    Rng img_rng(derive_seed(seed, step, i, 0));
    Rng aud_rng(derive_seed(seed, step, i, 1));
    const auto img = image::augment_cropped(halves_[e], aug, img_rng);
    const auto mel = audio::random_time_crop(mels_[e], frames, aud_rng);
    std::copy(img.values.begin(), img.values.end(), b.images.data.begin() + i * isz);
    std::copy(mel.values.begin(), mel.values.end(), b.spectrograms.data.begin() + i * asz);
    b.ids[i] = ids_[e];
  });
  return b;
}

PairBatch DataSource::eval_batch(const std::vector<std::size_t>& idx, const image::AugmentConfig& aug,
                                 std::size_t threads) const {
  aug.validate();
  const std::size_t side = aug.out_size, frames = fe_.crop_frames;
  auto b = alloc_batch(idx.size(), side, fe_.num_bands, frames);
  const std::size_t isz = 3 * side * side, asz = fe_.num_bands * frames;
  parallel_for(idx.size(), threads, [&](std::size_t i) {
    const std::size_t e = idx.at(i);
    const auto img = image::eval_from_cropped(halves_[e], aug);
    const auto mel = audio::center_time_crop(mels_[e], frames);
    std::copy(img.values.begin(), img.values.end(), b.images.data.begin() + i * isz);
    std::copy(mel.values.begin(), mel.values.end(), b.spectrograms.data.begin() + i * asz);
    b.ids[i] = ids_[e];
  });
  return b;
}

}  // namespace avp::data
