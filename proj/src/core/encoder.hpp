#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace avp::nn {

enum class NormKind { channel, none };

const char* to_string(NormKind k);
NormKind parse_norm_kind(const std::string& s);

/// Small residual network: stem conv -> residual stages -> global average pool -> FC.
struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t stem_kernel = 4;
  std::size_t stem_stride = 4;
  std::vector<std::size_t> stage_channels{8, 16, 32};
  std::size_t blocks_per_stage = 1;
  std::size_t kernel_size = 3;  // residual-block convolutions
  std::size_t embedding_dim = 128;
  NormKind norm = NormKind::channel;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;
  std::vector<bool> decay;  // conv and FC weights take weight decay; norms and biases do not

  std::size_t index_of(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Per-tensor gradients aligned with EncoderParams::tensors, plus the input-batch gradient.
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> params;
  Tensor<T> input;
};

struct Plan;

/// Forward intermediates for one batch. Consumed by exactly one backward() call and only
/// valid while the EncoderParams it was recorded from are alive and unmodified.
template <typename T>
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(GradTape&&) noexcept;
  GradTape& operator=(GradTape&&) noexcept;

  std::size_t batch_size() const { return samples_.size(); }
  bool consumed() const { return consumed_; }
  /// Named intermediate activation for one sample (e.g. "stem.norm", "s0.b0.out").
  const std::vector<T>& activation(std::size_t sample, const std::string& name) const;

 private:
  template <typename U>
  friend struct TapeAccess;

  struct Sample {
    std::vector<std::vector<T>> slots;
    std::vector<std::vector<T>> aux;
  };
  const EncoderParams<T>* params_ = nullptr;
  std::shared_ptr<const Plan> plan_;
  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> slot_shapes_;  // (C, H, W) per slot
  std::vector<Sample> samples_;
  bool consumed_ = false;
};

template <typename T>
struct ForwardResult {
  Embeddings<T> embeddings;
  GradTape<T> tape;
};

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg, std::uint64_t seed);

/// batch: [n x C x H x W]. threads splits samples across workers; results do not depend on it.
template <typename T>
ForwardResult<T> forward(const EncoderParams<T>& params, const Tensor<T>& batch, std::size_t threads = 1);

/// Inference only: embeddings without retaining intermediates.
template <typename T>
Embeddings<T> embed(const EncoderParams<T>& params, const Tensor<T>& batch, std::size_t threads = 1);

/// Exact reverse-mode gradients of sum_ij upstream[i][j] * embedding[i][j]. Per-sample
/// contributions are reduced in sample order.
template <typename T>
Gradients<T> backward(GradTape<T>& tape, const Embeddings<T>& upstream, std::size_t threads = 1);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const EncoderParams<T>& params);

/// Bias-corrected Adam with decoupled weight decay on tensors flagged in params.decay.
/// lr is passed separately so schedules can vary it per step.
template <typename T>
void adam_step(EncoderParams<T>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg, double lr);

template <typename T, typename U>
EncoderParams<U> cast_params(const EncoderParams<T>& p);

}  // namespace avp::nn
