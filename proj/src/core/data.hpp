#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audio_frontend.hpp"
#include "common.hpp"
#include "image.hpp"
#include "image_pipeline.hpp"
#include "tensor.hpp"

namespace avp::data {

enum class Split { train, val, test };

const char* to_string(Split s);
Split parse_split(const std::string& s);

/// 90/5/5 assignment from the FNV-1a hash of the id; used when the split column is empty.
Split hash_split(const std::string& id);

struct ManifestEntry {
  std::string id;
  std::string audio_path;
  std::string image_path;
  double longitude = 0.0;
  double latitude = 0.0;
  Split split = Split::train;
  std::string attribution;
};

inline constexpr const char* kManifestHeader = "id,audio_path,image_path,longitude,latitude,split,attribution";

struct Manifest {
  std::string base_dir;  // relative paths resolve against this
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split s) const;
  std::string resolve(const std::string& path) const;
};

Manifest parse_manifest(const std::string& text, const std::string& base_dir = ".");
Manifest load_manifest(const std::string& path);
std::string format_manifest(const Manifest& m);
void write_manifest(const std::string& path, const Manifest& m);

/// Class label of a synthetic id: the prefix before the first '_' (the whole id if none).
std::string class_of(const std::string& id);

struct Pair {
  image::ImageTensor image;
  audio::Waveform audio;
};

/// Decodes both files; the waveform is resampled to sample_rate. Errors name the entry id.
Pair load_pair(const Manifest& m, const ManifestEntry& e, int sample_rate);

enum class ImageFormat { png, ppm };

struct SynthSpec {
  std::size_t num_classes = 8;
  std::size_t train_per_class = 64;
  std::size_t test_per_class = 16;
  std::uint64_t seed = 0;
  std::size_t image_size = 448;
  int sample_rate = 22050;
  double duration = 4.0;  // seconds
  double image_noise = 0.04;
  double audio_noise = 0.02;
  ImageFormat image_format = ImageFormat::png;
  /// Replaces content with per-entry codes: a flat image whose red level and a pure tone
  /// whose mel band both encode the entry ordinal.
  bool fingerprint = false;

  void validate() const;
};

struct ClassParams {
  double hue;          // [0, 1)
  double texture;      // cycles per image side
  double fundamental;  // Hz
};

ClassParams class_params(const SynthSpec& spec, std::size_t k);

/// Red level and mel band carried by the fingerprint of entry `ordinal`.
float fingerprint_level(std::size_t ordinal);
std::size_t fingerprint_band(std::size_t ordinal);
inline constexpr std::size_t kMaxFingerprints = 80;

image::ImageTensor synth_image(const SynthSpec& spec, std::size_t k, double u, std::uint64_t seed);
audio::Waveform synth_audio(const SynthSpec& spec, std::size_t k, double u, std::uint64_t seed);

/// Writes images/, audio/ and manifest.csv under out_dir and returns the manifest.
Manifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

/// One epoch of batches over [0, count): a uniform permutation from (seed, epoch), cut into
/// full batches; the short tail is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

struct PairBatch {
  Tensor<float> images;        // [n x 3 x S x S]
  Tensor<float> spectrograms;  // [n x 1 x bands x frames]
  std::vector<std::string> ids;
};

/// Decoded split held in memory: half-cropped images and full-length log-mels.
class DataSource {
 public:
  /// With skip_bad, undecodable entries are left out and listed in skipped(); otherwise the
  /// first failure is rethrown.
  DataSource(const Manifest& m, Split split, const audio::FrontendConfig& fe, std::size_t threads,
             bool skip_bad = false);
  DataSource(const Manifest& m, const std::vector<ManifestEntry>& entries, const audio::FrontendConfig& fe,
             std::size_t threads, bool skip_bad = false);

  std::size_t size() const { return ids_.size(); }
  const audio::FrontendConfig& frontend() const { return fe_; }
  const std::vector<std::string>& ids() const { return ids_; }
  /// Entries that failed to decode, as "id: reason".
  const std::vector<std::string>& skipped() const { return skipped_; }

  /// Augmented batch; sample i draws from derive_seed(seed, step, i, modality).
  PairBatch train_batch(const std::vector<std::size_t>& idx, const image::AugmentConfig& aug, std::uint64_t seed,
                        std::uint64_t step, std::size_t threads) const;
  /// Deterministic center crops in both modalities.
  PairBatch eval_batch(const std::vector<std::size_t>& idx, const image::AugmentConfig& aug, std::size_t threads) const;

 private:
  void load(const Manifest& m, const std::vector<ManifestEntry>& entries, std::size_t threads, bool skip_bad);

  audio::FrontendConfig fe_;
  std::vector<std::string> ids_;
  std::vector<image::ImageTensor> halves_;
  std::vector<audio::LogMelSpectrogram> mels_;
  std::vector<std::string> skipped_;
};

}  // namespace avp::data
