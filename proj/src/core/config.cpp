#include "config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "binary_io.hpp"

namespace avp::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw Error(Errc::invalid_argument, "config key '" + key + "': '" + value + "' is not " + want);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
    bad_value(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(float v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename E, typename Parse>
E wrap_enum(const std::string& key, const std::string& v, Parse parse) {
  try {
    return parse(v);
  } catch (const Error& e) {
    throw Error(Errc::invalid_argument, "config key '" + key + "': " + e.what());
  }
}

struct Entry {
  std::string key;
  std::string description;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define AVP_NUM(KEY, FIELD, CONV, DESC)                                                   \
  Entry {                                                                                 \
    KEY, DESC, [](const RunConfig& c) { return fmt(c.FIELD); },                           \
        [](RunConfig& c, const std::string& v) { c.FIELD = CONV(KEY, v); }                \
  }

#define AVP_SIZE(KEY, FIELD, DESC)                                                                      \
  Entry {                                                                                               \
    KEY, DESC, [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.FIELD)); },             \
        [](RunConfig& c, const std::string& v) { c.FIELD = to_size(KEY, v); }                           \
  }

void encoder_entries(std::vector<Entry>& out, const std::string& which) {
  auto pick = [which](RunConfig& c) -> nn::EncoderConfig& {
    return which == "image" ? c.train.image_encoder : c.train.audio_encoder;
  };
  auto cpick = [which](const RunConfig& c) -> const nn::EncoderConfig& {
    return which == "image" ? c.train.image_encoder : c.train.audio_encoder;
  };
  const std::string p = "encoder." + which + ".";
  out.push_back({p + "stage_channels", "channels per residual stage, comma-separated",
                 [=](const RunConfig& c) { return fmt(cpick(c).stage_channels); },
                 [=](RunConfig& c, const std::string& v) { pick(c).stage_channels = to_list(p + "stage_channels", v); }});
  out.push_back({p + "blocks_per_stage", "residual blocks in each stage",
                 [=](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(cpick(c).blocks_per_stage)); },
                 [=](RunConfig& c, const std::string& v) { pick(c).blocks_per_stage = to_size(p + "blocks_per_stage", v); }});
  out.push_back({p + "stem_kernel", "stem convolution kernel size",
                 [=](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(cpick(c).stem_kernel)); },
                 [=](RunConfig& c, const std::string& v) { pick(c).stem_kernel = to_size(p + "stem_kernel", v); }});
  out.push_back({p + "stem_stride", "stem convolution stride",
                 [=](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(cpick(c).stem_stride)); },
                 [=](RunConfig& c, const std::string& v) { pick(c).stem_stride = to_size(p + "stem_stride", v); }});
  out.push_back({p + "kernel_size", "kernel size of the residual-block convolutions (odd)",
                 [=](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(cpick(c).kernel_size)); },
                 [=](RunConfig& c, const std::string& v) { pick(c).kernel_size = to_size(p + "kernel_size", v); }});
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"seed", "master seed for synthesis, initialization, sampling, augmentation and baselines",
                 [](const RunConfig& c) { return fmt(c.train.seed); },
                 [](RunConfig& c, const std::string& v) {
                   const auto s = to_u64("seed", v);
                   c.train.seed = c.synth.seed = c.eval.seed = s;
                 }});
    e.push_back(AVP_SIZE("threads", train.threads, "worker threads (0: all cores, capped by AVPRETRAIN_THREADS)"));

    e.push_back({"train.loss", "batch-triplet, naive-triplet or contrastive",
                 [](const RunConfig& c) { return std::string(loss::to_string(c.train.loss_kind)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.loss_kind = wrap_enum<loss::Kind>("train.loss", v, loss::parse_kind);
                 }});
    e.push_back(AVP_NUM("train.margin", train.loss.margin, to_double, "triplet hinge margin"));
    e.push_back(AVP_NUM("train.temperature", train.loss.temperature, to_double, "contrastive softmax temperature"));
    e.push_back({"train.reduction", "mean (divide by the term count) or sum",
                 [](const RunConfig& c) { return std::string(loss::to_string(c.train.loss.reduction)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.loss.reduction = wrap_enum<loss::Reduction>("train.reduction", v, loss::parse_reduction);
                 }});
    e.push_back(AVP_NUM("train.include_diagonal", train.loss.include_diagonal, to_bool,
                        "batch triplet: also count the 2n constant diagonal terms"));
    e.push_back(AVP_SIZE("train.batch_size", train.batch_size, "pairs per step (drop-last batching)"));
    e.push_back(AVP_SIZE("train.steps", train.steps, "total optimizer steps"));
    e.push_back(AVP_NUM("train.lr", train.lr, to_double, "peak learning rate"));
    e.push_back({"train.schedule", "constant or cosine",
                 [](const RunConfig& c) { return std::string(train::to_string(c.train.schedule)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.schedule = wrap_enum<train::Schedule>("train.schedule", v, train::parse_schedule);
                 }});
    e.push_back(AVP_NUM("train.lr_min", train.lr_min, to_double, "final learning rate of the cosine schedule"));
    e.push_back(AVP_NUM("train.beta1", train.adam.beta1, to_double, "Adam first-moment decay"));
    e.push_back(AVP_NUM("train.beta2", train.adam.beta2, to_double, "Adam second-moment decay"));
    e.push_back(AVP_NUM("train.adam_eps", train.adam.eps, to_double, "Adam denominator epsilon"));
    e.push_back(AVP_NUM("train.weight_decay", train.adam.weight_decay, to_double,
                        "decoupled weight decay on conv/FC weights"));
    e.push_back(AVP_SIZE("train.checkpoint_every", train.checkpoint_every, "periodic checkpoint interval (0: final only)"));
    e.push_back(AVP_SIZE("train.log_every", train.log_every, "log record interval in steps"));

    e.push_back({"encoder.embedding_dim", "shared embedding dimension d",
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.train.image_encoder.embedding_dim)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.image_encoder.embedding_dim = c.train.audio_encoder.embedding_dim =
                       to_size("encoder.embedding_dim", v);
                 }});
    e.push_back({"encoder.norm", "channel or none",
                 [](const RunConfig& c) { return std::string(nn::to_string(c.train.image_encoder.norm)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.image_encoder.norm = c.train.audio_encoder.norm =
                       wrap_enum<nn::NormKind>("encoder.norm", v, nn::parse_norm_kind);
                 }});
    encoder_entries(e, "image");
    encoder_entries(e, "audio");

    e.push_back(AVP_SIZE("augment.crop_min", train.augment.crop_min, "smallest random square crop side (px)"));
    e.push_back(AVP_SIZE("augment.crop_max", train.augment.crop_max, "largest random square crop side (px)"));
    e.push_back(AVP_SIZE("augment.out_size", train.augment.out_size, "encoder input side (px)"));
    e.push_back(AVP_NUM("augment.hue_shift", train.augment.hue_shift, to_double, "max additive hue shift (turns)"));
    e.push_back(AVP_NUM("augment.sat_min", train.augment.sat_min, to_double, "min saturation scale"));
    e.push_back(AVP_NUM("augment.sat_max", train.augment.sat_max, to_double, "max saturation scale"));
    e.push_back(AVP_NUM("augment.val_min", train.augment.val_min, to_double, "min value scale"));
    e.push_back(AVP_NUM("augment.val_max", train.augment.val_max, to_double, "max value scale"));
    e.push_back(AVP_NUM("augment.max_rotation", train.augment.max_rotation, to_double, "max rotation (degrees)"));
    e.push_back(AVP_NUM("augment.blur_prob", train.augment.blur_prob, to_double, "probability of a 3x3 box blur"));

    e.push_back({"frontend.sample_rate", "audio is resampled to this rate (Hz)",
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.train.frontend.sample_rate)); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.frontend.sample_rate = static_cast<int>(to_size("frontend.sample_rate", v));
                 }});
    e.push_back(AVP_SIZE("frontend.window_size", train.frontend.window_size, "STFT window and FFT length"));
    e.push_back(AVP_SIZE("frontend.hop", train.frontend.hop, "STFT hop"));
    e.push_back(AVP_SIZE("frontend.num_bands", train.frontend.num_bands, "mel bands"));
    e.push_back(AVP_NUM("frontend.f_min", train.frontend.f_min, to_double, "lowest mel edge (Hz)"));
    e.push_back(AVP_NUM("frontend.f_max", train.frontend.f_max, to_double, "highest mel edge (Hz, 0: Nyquist)"));
    e.push_back({"frontend.eps", "floor applied before the log",
                 [](const RunConfig& c) { return fmt(c.train.frontend.eps); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.frontend.eps = static_cast<float>(to_double("frontend.eps", v));
                 }});
    e.push_back(AVP_SIZE("frontend.crop_frames", train.frontend.crop_frames, "spectrogram frames per example"));

    e.push_back(AVP_SIZE("synth.classes", synth.num_classes, "synthetic classes"));
    e.push_back(AVP_SIZE("synth.train_per_class", synth.train_per_class, "synthetic training pairs per class"));
    e.push_back(AVP_SIZE("synth.test_per_class", synth.test_per_class, "synthetic held-out pairs per class"));
    e.push_back(AVP_SIZE("synth.image_size", synth.image_size, "synthetic image side (px)"));
    e.push_back(AVP_NUM("synth.duration", synth.duration, to_double, "synthetic clip length (s)"));
    e.push_back(AVP_NUM("synth.image_noise", synth.image_noise, to_double, "pixel noise standard deviation"));
    e.push_back(AVP_NUM("synth.audio_noise", synth.audio_noise, to_double, "white noise standard deviation"));
    e.push_back({"synth.sample_rate", "synthetic audio sample rate (Hz)",
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.synth.sample_rate)); },
                 [](RunConfig& c, const std::string& v) {
                   c.synth.sample_rate = static_cast<int>(to_size("synth.sample_rate", v));
                 }});
    e.push_back({"synth.image_format", "png or ppm",
                 [](const RunConfig& c) {
                   return std::string(c.synth.image_format == data::ImageFormat::png ? "png" : "ppm");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "png")
                     c.synth.image_format = data::ImageFormat::png;
                   else if (v == "ppm")
                     c.synth.image_format = data::ImageFormat::ppm;
                   else
                     bad_value("synth.image_format", v, "png or ppm");
                 }});
    e.push_back(AVP_NUM("synth.fingerprint", synth.fingerprint, to_bool,
                        "write per-entry code images/tones instead of class content"));

    e.push_back({"eval.direction", "image-to-audio or audio-to-image",
                 [](const RunConfig& c) { return std::string(retrieval::to_string(c.eval.direction)); },
                 [](RunConfig& c, const std::string& v) {
                   c.eval.direction = wrap_enum<retrieval::Direction>("eval.direction", v, retrieval::parse_direction);
                 }});
    e.push_back({"eval.split", "manifest split to evaluate (train, val, test)",
                 [](const RunConfig& c) { return std::string(data::to_string(c.eval.split)); },
                 [](RunConfig& c, const std::string& v) {
                   c.eval.split = wrap_enum<data::Split>("eval.split", v, data::parse_split);
                 }});
    e.push_back({"eval.ks", "Recall@K cutoffs, comma-separated",
                 [](const RunConfig& c) { return fmt(c.eval.ks); },
                 [](RunConfig& c, const std::string& v) { c.eval.ks = to_list("eval.ks", v); }});
    e.push_back(AVP_SIZE("eval.baseline_seeds", eval.baseline_seeds, "random-embedding baseline repetitions"));
    e.push_back(AVP_SIZE("eval.top_k", eval.top_k, "neighbors listed by retrieve"));
    e.push_back(AVP_SIZE("eval.batch", eval.batch, "embedding batch size"));
    e.push_back(AVP_SIZE("ablate.steps", ablate.steps, "optimizer steps for each ablation arm (0: train.steps)"));
    return e;
  }();
  return entries;
}

#undef AVP_NUM
#undef AVP_SIZE

const Entry& find(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
}

}  // namespace

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> out = [] {
    const RunConfig defaults;
    std::vector<KeyInfo> k;
    for (const auto& e : registry()) k.push_back({e.key, e.get(defaults), e.description});
    return k;
  }();
  return out;
}

bool has_key(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return true;
  return false;
}

void set(RunConfig& cfg, const std::string& key, const std::string& value) { find(key).set(cfg, trim(value)); }

std::string get(const RunConfig& cfg, const std::string& key) { return find(key).get(cfg); }

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw Error(Errc::invalid_argument, "override '" + assignment + "' must look like key=value");
  set(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

RunConfig parse_text(const std::string& text) {
  RunConfig cfg;
  apply_text(cfg, text);
  return cfg;
}

void apply_text(RunConfig& cfg, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    try {
      apply_override(cfg, body);
    } catch (const Error& e) {
      throw Error(e.code(), "config line " + std::to_string(n) + ": " + e.what());
    }
  }
}

RunConfig load(const std::string& path) { return parse_text(read_text_file(path)); }

}  // namespace avp::config
