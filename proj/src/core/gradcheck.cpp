#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace avp::gradcheck {

nn::EncoderConfig toy_encoder_config(std::size_t in_channels) {
  nn::EncoderConfig c;
  c.in_channels = in_channels;
  c.stem_kernel = 3;
  c.stem_stride = 1;
  c.stage_channels = {4, 4};
  c.blocks_per_stage = 1;
  c.kernel_size = 3;
  c.embedding_dim = 4;
  c.norm = nn::NormKind::channel;
  return c;
}

namespace {

constexpr std::size_t kBatch = 2, kSide = 8;

struct Probe {
  double loss = 0.0;
  std::vector<bool> pattern;  // ReLU outputs > 0, then active hinges
};

std::vector<std::string> relu_slots(const nn::EncoderConfig& cfg) {
  std::vector<std::string> out{"stem.relu"};
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s)
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = "s" + std::to_string(s) + ".b" + std::to_string(b);
      out.push_back(p + ".relu1");
      out.push_back(p + ".out");
    }
  return out;
}

}  // namespace

EncoderCheck encoder_grad_check(std::size_t in_channels, std::uint64_t seed, double step) {
  const auto cfg = toy_encoder_config(in_channels);
  const bool visual = in_channels == 3;
  EncoderCheck out;
  out.name = visual ? "image-encoder" : "audio-encoder";
  out.seed = seed;
  out.step = step;

  Rng rng(derive_seed(seed, in_channels, 0, 11));
  std::normal_distribution<double> g;
  auto params = nn::init_params<double>(cfg, derive_seed(seed, in_channels, 1, 11));
  // move norm affine terms and biases off their neutral initial values
  for (auto& t : params.tensors)
    for (auto& v : t.data) v += 0.1 * g(rng);
  Tensor<double> x({kBatch, in_channels, kSide, kSide});
  for (auto& v : x.data) v = g(rng);
  Embeddings<double> other(kBatch, cfg.embedding_dim);
  for (auto& v : other.values) v = 0.5 * g(rng);

  loss::LossConfig lc;
  lc.reduction = loss::Reduction::sum;
  const auto slots = relu_slots(cfg);

  auto evaluate = [&](const nn::EncoderParams<double>& p, const Tensor<double>& input, bool want_grad,
                      nn::Gradients<double>* grads) {
    auto fr = nn::forward(p, input);
    const auto& E = fr.embeddings;
    const auto lr = visual ? loss::batch_triplet_loss(E, other, lc) : loss::batch_triplet_loss(other, E, lc);
    Probe pr;
    pr.loss = lr.loss;
    for (std::size_t i = 0; i < kBatch; ++i)
      for (const auto& s : slots)
        for (double v : fr.tape.activation(i, s)) pr.pattern.push_back(v > 0.0);
    const auto D = visual ? loss::pairwise_distance_matrix(E, other) : loss::pairwise_distance_matrix(other, E);
    for (std::size_t i = 0; i < kBatch; ++i)
      for (std::size_t j = 0; j < kBatch; ++j)
        if (i != j) {
          pr.pattern.push_back(D.at(i, i) - D.at(i, j) + lc.margin > 0.0);
          pr.pattern.push_back(D.at(j, j) - D.at(i, j) + lc.margin > 0.0);
        }
    if (want_grad) *grads = nn::backward(fr.tape, visual ? lr.grad_v : lr.grad_a);
    return pr;
  };

  nn::Gradients<double> analytic;
  const Probe base = evaluate(params, x, true, &analytic);

  auto check_tensor = [&](const std::string& name, std::vector<double>& values, const std::vector<double>& grad) {
    double num_inf = 0.0, ana_inf = 0.0, diff_inf = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double keep = values[k];
      values[k] = keep + step;
      const Probe plus = evaluate(params, x, false, nullptr);
      values[k] = keep - step;
      const Probe minus = evaluate(params, x, false, nullptr);
      values[k] = keep;
      if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      const double fd = (plus.loss - minus.loss) / (2.0 * step);
      num_inf = std::max(num_inf, std::fabs(fd));
      ana_inf = std::max(ana_inf, std::fabs(grad[k]));
      diff_inf = std::max(diff_inf, std::fabs(fd - grad[k]));
    }
    const double rel = diff_inf / std::max({num_inf, ana_inf, 1e-12});
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_tensor = name;
    }
  };

  for (std::size_t t = 0; t < params.tensors.size(); ++t)
    check_tensor(params.names[t], params.tensors[t].data, analytic.params[t]);
  check_tensor("input", x.data, analytic.input.data);
  return out;
}

Summary run_suite(std::uint64_t seed, std::size_t seeds, double threshold) {
  Summary s;
  s.threshold = threshold;
  s.passed = true;
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t sd = seed + i;
    for (auto kind : {loss::Kind::batch_triplet, loss::Kind::naive_triplet, loss::Kind::contrastive}) {
      auto r = loss::loss_grad_check_f32(kind, 6, 5, sd);
      s.passed = s.passed && r.max_rel_error < threshold;
      s.losses.push_back(std::move(r));
    }
    for (std::size_t ch : {std::size_t{3}, std::size_t{1}}) {
      auto r = encoder_grad_check(ch, sd);
      s.passed = s.passed && r.max_rel_error < threshold && r.checked > 0;
      s.encoders.push_back(std::move(r));
    }
  }
  return s;
}

std::string summary_table(const Summary& s) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-16s %6s %10s %14s %8s\n", "check", "seeds", "precision", "max rel err", "status");
  out += line;
  auto row = [&](const std::string& name, const char* precision, double worst, std::size_t seeds) {
    std::snprintf(line, sizeof line, "%-16s %6zu %10s %14.3e %8s\n", name.c_str(), seeds, precision, worst,
                  worst < s.threshold ? "ok" : "FAIL");
    out += line;
  };
  for (auto kind : {loss::Kind::batch_triplet, loss::Kind::naive_triplet, loss::Kind::contrastive}) {
    double worst = 0.0;
    std::size_t n = 0;
    for (const auto& r : s.losses)
      if (r.kind == loss::to_string(kind)) worst = std::max(worst, r.max_rel_error), ++n;
    row(loss::to_string(kind), "float32", worst, n);
  }
  for (const char* name : {"image-encoder", "audio-encoder"}) {
    double worst = 0.0;
    std::size_t n = 0, skipped = 0, checked = 0;
    for (const auto& r : s.encoders)
      if (r.name == name) worst = std::max(worst, r.max_rel_error), ++n, skipped += r.skipped, checked += r.checked;
    row(name, "float64", worst, n);
    std::snprintf(line, sizeof line, "  %zu probes checked, %zu skipped at kinks\n", checked, skipped);
    out += line;
  }
  std::snprintf(line, sizeof line, "threshold %.0e: %s\n", s.threshold, s.passed ? "all passed" : "FAILED");
  out += line;
  return out;
}

}  // namespace avp::gradcheck
