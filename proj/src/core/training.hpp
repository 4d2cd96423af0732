#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "audio_frontend.hpp"
#include "data.hpp"
#include "encoder.hpp"
#include "image_pipeline.hpp"
#include "losses.hpp"

namespace avp::train {

enum class Schedule { constant, cosine };

const char* to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct TrainConfig {
  nn::EncoderConfig image_encoder;
  nn::EncoderConfig audio_encoder;
  loss::Kind loss_kind = loss::Kind::batch_triplet;
  loss::LossConfig loss;
  std::size_t batch_size = 64;
  std::size_t steps = 400;
  double lr = 1e-3;
  Schedule schedule = Schedule::constant;
  double lr_min = 0.0;  // cosine floor
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 1;
  std::size_t threads = 0;  // 0: default_threads()
  image::AugmentConfig augment;
  audio::FrontendConfig frontend;

  TrainConfig();
  void validate() const;
  std::size_t worker_count() const;
};

double learning_rate(const TrainConfig& cfg, std::size_t step);

struct LogRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_pos = 0.0;     // mean D_ii
  double mean_neg = 0.0;     // mean D_ij, i != j
  double active_frac = 0.0;  // active hinge terms / all terms (1 for contrastive)
  double grad_norm_image = 0.0;
  double grad_norm_audio = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the run (or resume) started
};

std::string to_json_line(const LogRecord& r);

/// Everything needed to continue a run exactly: parameters, optimizer moments and the
/// position in the seeded stream (all randomness derives from (seed, step)).
struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;  // completed optimizer steps
  std::uint64_t seed = 0;
  nn::EncoderParams<float> image;
  nn::EncoderParams<float> audio;
  nn::AdamState<float> image_opt;
  nn::AdamState<float> audio_opt;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
/// Verifies magic, version and CRC32 before decoding anything.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// The TrainConfig a checkpoint was written with.
TrainConfig checkpoint_config(const Checkpoint& c);

struct TrainOptions {
  std::string out_dir;            // log and checkpoints; empty writes nothing
  const Checkpoint* resume = nullptr;
  std::function<void(const LogRecord&)> on_log;
};

struct TrainResult {
  Checkpoint final_state;
  std::vector<LogRecord> log;
  std::string checkpoint_path;  // empty when out_dir is empty
};

/// Fresh initial state for a config (step 0).
Checkpoint initial_state(const TrainConfig& cfg);

/// Runs steps [start, cfg.steps) on the train split. Throws Errc::numeric on a non-finite
/// loss with the step, learning rate and batch ids.
TrainResult train(const TrainConfig& cfg, const data::DataSource& source, const TrainOptions& opt);

/// Keys whose values may differ between a checkpoint and the config used to resume it.
bool resumable_key(const std::string& key);

}  // namespace avp::train
