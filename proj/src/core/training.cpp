#include "training.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <json.hpp>

#include "binary_io.hpp"
#include "config.hpp"

namespace fs = std::filesystem;

namespace avp::train {

const char* to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }

Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw Error(Errc::invalid_argument, "unknown schedule '" + s + "' (expected constant or cosine)");
}

TrainConfig::TrainConfig() { audio_encoder.in_channels = 1; }

void TrainConfig::validate() const {
  image_encoder.validate();
  audio_encoder.validate();
  if (image_encoder.in_channels != 3 || audio_encoder.in_channels != 1)
    throw Error(Errc::invalid_argument, "image encoder takes 3 channels and audio encoder 1");
  if (image_encoder.embedding_dim != audio_encoder.embedding_dim)
    throw Error(Errc::invalid_argument, "both encoders must share the embedding dimension");
  loss.validate();
  const std::size_t min_batch = loss_kind == loss::Kind::batch_triplet ? 1 : 2;
  if (batch_size < min_batch)
    throw Error(Errc::invalid_argument, std::string(loss::to_string(loss_kind)) + " needs batch_size >= " +
                                            std::to_string(min_batch));
  if (!(lr >= 0.0) || !(lr_min >= 0.0)) throw Error(Errc::invalid_argument, "learning rates must be nonnegative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw Error(Errc::invalid_argument, "Adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0) || !(adam.weight_decay >= 0.0))
    throw Error(Errc::invalid_argument, "Adam eps must be positive and weight decay nonnegative");
  if (log_every == 0) throw Error(Errc::invalid_argument, "log_every must be positive");
  augment.validate();
  if (frontend.crop_frames == 0 || frontend.num_bands == 0)
    throw Error(Errc::invalid_argument, "frontend crop_frames and num_bands must be positive");
}

std::size_t TrainConfig::worker_count() const { return threads ? threads : default_threads(); }

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (cfg.schedule == Schedule::constant || cfg.steps <= 1) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

std::string to_json_line(const LogRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["mean_pos"] = r.mean_pos;
  j["mean_neg"] = r.mean_neg;
  j["active_frac"] = r.active_frac;
  j["grad_norm_image"] = r.grad_norm_image;
  j["grad_norm_audio"] = r.grad_norm_audio;
  j["lr"] = r.lr;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

namespace {

constexpr char kMagic[8] = {'A', 'V', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kDtypeF32 = 1;

void write_params(ByteWriter& w, const nn::EncoderParams<float>& p) {
  w.u32(static_cast<std::uint32_t>(p.tensors.size()));
  for (std::size_t k = 0; k < p.tensors.size(); ++k) {
    const auto& t = p.tensors[k];
    w.str(p.names[k]);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (float v : t.data) w.f32(v);
  }
}

void write_adam(ByteWriter& w, const nn::AdamState<float>& s) {
  w.u64(s.step);
  w.u32(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    w.u64(s.m[k].size());
    for (float v : s.m[k]) w.f32(v);
    for (float v : s.v[k]) w.f32(v);
  }
}

// Decodes into a parameter set whose structure comes from the stored config.
void read_params(ByteReader& r, nn::EncoderParams<float>& p, const char* which) {
  const std::uint32_t count = r.u32();
  if (count != p.tensors.size())
    throw Error(Errc::format, std::string(which) + " encoder: checkpoint holds " + std::to_string(count) +
                                  " tensors, config implies " + std::to_string(p.tensors.size()));
  for (std::size_t k = 0; k < count; ++k) {
    auto& t = p.tensors[k];
    const std::string name = r.str();
    if (name != p.names[k])
      throw Error(Errc::format, std::string(which) + " encoder: expected tensor '" + p.names[k] + "', found '" +
                                    name + "'");
    if (r.u8() != kDtypeF32) throw Error(Errc::format, "tensor '" + name + "': unsupported dtype");
    const std::uint32_t ndim = r.u32();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != t.shape)
      throw Error(Errc::format, "tensor '" + name + "': shape " + shape_string(shape) + " does not match " +
                                    shape_string(t.shape));
    for (float& v : t.data) v = r.f32();
  }
}

void read_adam(ByteReader& r, nn::AdamState<float>& s) {
  s.step = r.u64();
  const std::uint32_t count = r.u32();
  if (count != s.m.size()) throw Error(Errc::format, "optimizer state does not match the parameters");
  for (std::size_t k = 0; k < count; ++k) {
    if (r.u64() != s.m[k].size()) throw Error(Errc::format, "optimizer moment has the wrong length");
    for (float& v : s.m[k]) v = r.f32();
    for (float& v : s.v[k]) v = r.f32();
  }
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

double grad_norm(const std::vector<std::vector<float>>& g) {
  double acc = 0.0;
  for (const auto& t : g)
    for (float v : t) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.ckpt", step);
  return buf;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(c.config_text);
  w.u64(c.step);
  w.u64(c.seed);
  write_params(w, c.image);
  write_params(w, c.audio);
  write_adam(w, c.image_opt);
  write_adam(w, c.audio_opt);
  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return w.take();
}

TrainConfig checkpoint_config(const Checkpoint& c) { return config::parse_text(c.config_text).train; }

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + 8) throw Error(Errc::checksum, "checkpoint is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw Error(Errc::format, "not a checkpoint file");
  ByteReader head(bytes.data() + sizeof kMagic, 4);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion)
    throw Error(Errc::version, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
  ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (tail.u32() != crc_of(bytes.data(), bytes.size() - 4))
    throw Error(Errc::checksum, "checkpoint checksum mismatch (corrupt or truncated file)");

  ByteReader r(bytes.data() + sizeof kMagic + 4, bytes.size() - sizeof kMagic - 8);
  Checkpoint c;
  c.config_text = r.str();
  c.step = r.u64();
  c.seed = r.u64();
  const TrainConfig cfg = checkpoint_config(c);
  c.image = nn::init_params<float>(cfg.image_encoder, 0);
  c.audio = nn::init_params<float>(cfg.audio_encoder, 0);
  read_params(r, c.image, "image");
  read_params(r, c.audio, "audio");
  c.image_opt = nn::make_adam_state(c.image);
  c.audio_opt = nn::make_adam_state(c.audio);
  read_adam(r, c.image_opt);
  read_adam(r, c.audio_opt);
  if (r.remaining() != 0) throw Error(Errc::format, "trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) { write_file(path, serialize_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

bool resumable_key(const std::string& key) {
  return key == "train.steps" || key == "train.checkpoint_every" || key == "train.log_every" || key == "threads" ||
         key.rfind("eval.", 0) == 0 || key.rfind("synth.", 0) == 0 || key.rfind("ablate.", 0) == 0;
}

namespace {

std::string config_text_for(const TrainConfig& cfg) {
  config::RunConfig rc;
  rc.train = cfg;
  rc.synth.seed = rc.eval.seed = cfg.seed;
  return config::to_text(rc);
}

void check_resumable(const TrainConfig& cfg, const Checkpoint& ck) {
  config::RunConfig now, then = config::parse_text(ck.config_text);
  now.train = cfg;
  std::string diffs;
  for (const auto& k : config::keys()) {
    if (resumable_key(k.key)) continue;
    if (config::get(now, k.key) != config::get(then, k.key))
      diffs += " " + k.key + " (" + config::get(then, k.key) + " -> " + config::get(now, k.key) + ")";
  }
  if (!diffs.empty()) throw Error(Errc::invalid_argument, "config differs from the checkpoint's:" + diffs);
  if (ck.step > cfg.steps)
    throw Error(Errc::invalid_argument, "checkpoint is at step " + std::to_string(ck.step) + ", past train.steps = " +
                                            std::to_string(cfg.steps));
}

}  // namespace

Checkpoint initial_state(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint c;
  c.config_text = config_text_for(cfg);
  c.seed = cfg.seed;
  c.image = nn::init_params<float>(cfg.image_encoder, derive_seed(cfg.seed, 1, 0, 3));
  c.audio = nn::init_params<float>(cfg.audio_encoder, derive_seed(cfg.seed, 2, 0, 3));
  c.image_opt = nn::make_adam_state(c.image);
  c.audio_opt = nn::make_adam_state(c.audio);
  return c;
}

TrainResult train(const TrainConfig& cfg, const data::DataSource& source, const TrainOptions& opt) {
  cfg.validate();
  if (source.size() < cfg.batch_size)
    throw Error(Errc::invalid_argument, "train split has " + std::to_string(source.size()) +
                                            " usable pairs, fewer than batch_size " + std::to_string(cfg.batch_size));
  TrainResult res;
  Checkpoint& st = res.final_state;
  if (opt.resume) {
    check_resumable(cfg, *opt.resume);
    st = *opt.resume;
  } else {
    st = initial_state(cfg);
  }
  st.config_text = config_text_for(cfg);

  const std::size_t threads = cfg.worker_count();
  std::ofstream log_file;
  if (!opt.out_dir.empty()) {
    fs::create_directories(fs::path(opt.out_dir) / "checkpoints");
    const auto log_path = fs::path(opt.out_dir) / "train_log.jsonl";
    log_file.open(log_path, opt.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw Error(Errc::io, "cannot open " + log_path.string());
  }

  const std::size_t per_epoch = source.size() / cfg.batch_size;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::vector<std::size_t>> batches;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = st.step; step < cfg.steps; ++step) {
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      batches = data::epoch_batches(source.size(), cfg.batch_size, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto batch = source.train_batch(batches[step % per_epoch], cfg.augment, cfg.seed, step, threads);

    auto fv = nn::forward(st.image, batch.images, threads);
    auto fa = nn::forward(st.audio, batch.spectrograms, threads);
    const auto& V = fv.embeddings;
    const auto& A = fa.embeddings;

    loss::LossResult<float> lr;
    switch (cfg.loss_kind) {
      case loss::Kind::batch_triplet:
        lr = loss::batch_triplet_loss(V, A, cfg.loss);
        break;
      case loss::Kind::naive_triplet: {
        Rng neg_rng(derive_seed(cfg.seed, step, 0, 2));
        lr = loss::naive_triplet_batch_loss(V, A, loss::sample_negatives(V.rows, neg_rng), cfg.loss);
        break;
      }
      case loss::Kind::contrastive:
        lr = loss::contrastive_loss(V, A, cfg.loss);
        break;
    }
    const double rate = learning_rate(cfg, step);
    auto finite = [](const Embeddings<float>& E) {
      return std::all_of(E.values.begin(), E.values.end(), [](float x) { return std::isfinite(x); });
    };
    // an overflowed embedding can hide behind an inactive hinge, so check the inputs too
    if (!std::isfinite(lr.loss) || !finite(V) || !finite(A)) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
      char head[160];
      std::snprintf(head, sizeof head, "non-finite loss at step %zu (lr %.6g); batch ids: ", step, rate);
      throw Error(Errc::numeric, head + ids);
    }

    LogRecord rec;
    rec.step = step;
    rec.loss = lr.loss;
    {
      const auto D = loss::pairwise_distance_matrix(V, A);
      const std::size_t n = D.rows;
      double pos = 0.0, neg = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) (i == j ? pos : neg) += D.at(i, j);
      rec.mean_pos = pos / static_cast<double>(n);
      rec.mean_neg = n > 1 ? neg / static_cast<double>(n * (n - 1)) : 0.0;
    }
    rec.active_frac = lr.total_terms ? static_cast<double>(lr.active_terms) / static_cast<double>(lr.total_terms) : 0.0;
    rec.lr = rate;

    const auto gv = nn::backward(fv.tape, lr.grad_v, threads);
    const auto ga = nn::backward(fa.tape, lr.grad_a, threads);
    rec.grad_norm_image = grad_norm(gv.params);
    rec.grad_norm_audio = grad_norm(ga.params);
    nn::adam_step(st.image, gv.params, st.image_opt, cfg.adam, rate);
    nn::adam_step(st.audio, ga.params, st.audio_opt, cfg.adam, rate);
    st.step = step + 1;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (step % cfg.log_every == 0 || st.step == cfg.steps) {
      res.log.push_back(rec);
      if (log_file) log_file << to_json_line(rec) << "\n" << std::flush;
      if (opt.on_log) opt.on_log(rec);
    }
    if (!opt.out_dir.empty() && cfg.checkpoint_every && st.step % cfg.checkpoint_every == 0 && st.step != cfg.steps)
      save_checkpoint(st, (fs::path(opt.out_dir) / "checkpoints" / step_name(st.step)).string());
  }

  if (!opt.out_dir.empty()) {
    res.checkpoint_path = (fs::path(opt.out_dir) / "final.ckpt").string();
    save_checkpoint(st, res.checkpoint_path);
  }
  return res;
}

}  // namespace avp::train
