#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "losses.hpp"

namespace avp::gradcheck {

/// Two stages of 4 channels on an 8x8 input, d = 4.
nn::EncoderConfig toy_encoder_config(std::size_t in_channels);

struct EncoderCheck {
  std::string name;  // "image-encoder" or "audio-encoder"
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;  // max over tensors of ||g - g_fd||_inf / max(||g||_inf, ||g_fd||_inf)
  std::string worst_tensor;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries whose +-h probe crossed a ReLU or hinge kink
  double step = 0.0;
};

/// Toy encoder composed with the raw-sum batch triplet loss against fixed embeddings of the
/// other modality, in double precision. Every parameter and input entry is probed; probes
/// that change any ReLU or hinge activation pattern are skipped and counted.
EncoderCheck encoder_grad_check(std::size_t in_channels, std::uint64_t seed, double step = 1e-3);

struct Summary {
  std::vector<loss::GradCheckReport> losses;  // float32 checks
  std::vector<EncoderCheck> encoders;
  double threshold = 1e-3;
  bool passed = false;
};

/// Every loss (float32) and both toy encoders over `seeds` consecutive seeds from `seed`.
Summary run_suite(std::uint64_t seed, std::size_t seeds, double threshold = 1e-3);
std::string summary_table(const Summary& s);

}  // namespace avp::gradcheck
