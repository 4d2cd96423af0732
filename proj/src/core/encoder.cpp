#include "encoder.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "kernels.hpp"

namespace avp::nn {

const char* to_string(NormKind k) { return k == NormKind::channel ? "channel" : "none"; }

NormKind parse_norm_kind(const std::string& s) {
  if (s == "channel" || s == "channel-norm") return NormKind::channel;
  if (s == "none") return NormKind::none;
  throw Error(Errc::invalid_argument, "unknown norm kind '" + s + "' (expected channel or none)");
}

void EncoderConfig::validate() const {
  if (in_channels == 0) throw Error(Errc::invalid_argument, "in_channels must be positive");
  if (stage_channels.empty()) throw Error(Errc::invalid_argument, "stage_channels must be non-empty");
  for (auto c : stage_channels)
    if (c == 0) throw Error(Errc::invalid_argument, "stage channel counts must be positive");
  if (blocks_per_stage == 0) throw Error(Errc::invalid_argument, "blocks_per_stage must be positive");
  if (embedding_dim < 2) throw Error(Errc::invalid_argument, "embedding_dim must be at least 2");
  if (stem_kernel == 0 || stem_stride == 0 || kernel_size == 0)
    throw Error(Errc::invalid_argument, "kernel sizes and strides must be positive");
}

// ---------------------------------------------------------------------------------------
// Plan: a straight-line op list over numbered activation slots, built from the config.

struct Plan {
  struct Conv {
    std::size_t in, out, cin, cout, k, stride, pad;
    int w, b;  // b = -1 when the conv has no bias
  };
  struct Norm {
    std::size_t in, out, aux;
    int g, b;
  };
  struct Relu {
    std::size_t in, out;
  };
  struct Add {
    std::size_t a, b, out;
  };
  struct Gap {
    std::size_t in, out;
  };
  struct Fc {
    std::size_t in, out, cin, cout;
    int w, b;
  };
  using Op = std::variant<Conv, Norm, Relu, Add, Gap, Fc>;

  std::vector<Op> ops;
  std::vector<std::string> slot_names;
  std::size_t aux_count = 0;

  struct ParamSpec {
    std::string name;
    std::vector<std::size_t> shape;
    enum Kind { conv_w, bias, norm_g, norm_b, fc_w } kind;
  };
  std::vector<ParamSpec> params;

  std::size_t output_slot() const { return slot_names.size() - 1; }
};

namespace {

struct PlanBuilder {
  const EncoderConfig& cfg;
  Plan plan;

  std::size_t slot(const std::string& name) {
    plan.slot_names.push_back(name);
    return plan.slot_names.size() - 1;
  }
  int param(const std::string& name, std::vector<std::size_t> shape, Plan::ParamSpec::Kind kind) {
    plan.params.push_back({name, std::move(shape), kind});
    return static_cast<int>(plan.params.size() - 1);
  }

  bool has_norm() const { return cfg.norm == NormKind::channel; }

  // conv (+ norm when enabled); returns the output slot
  std::size_t conv_norm(const std::string& prefix, std::size_t in, std::size_t cin, std::size_t cout, std::size_t k,
                        std::size_t stride) {
    const std::size_t pad = (k % 2 == 1) ? (k - 1) / 2 : 0;
    const int w = param(prefix + ".conv.w", {cout, cin, k, k}, Plan::ParamSpec::conv_w);
    const int b = has_norm() ? -1 : param(prefix + ".conv.b", {cout}, Plan::ParamSpec::bias);
    const std::size_t out = slot(prefix + ".conv");
    plan.ops.push_back(Plan::Conv{in, out, cin, cout, k, stride, pad, w, b});
    if (!has_norm()) return out;
    const int g = param(prefix + ".norm.g", {cout}, Plan::ParamSpec::norm_g);
    const int beta = param(prefix + ".norm.b", {cout}, Plan::ParamSpec::norm_b);
    const std::size_t normed = slot(prefix + ".norm");
    plan.ops.push_back(Plan::Norm{out, normed, plan.aux_count++, g, beta});
    return normed;
  }

  std::size_t relu(const std::string& name, std::size_t in) {
    const std::size_t out = slot(name);
    plan.ops.push_back(Plan::Relu{in, out});
    return out;
  }

  Plan build() {
    std::size_t x = slot("input");
    const std::size_t c0 = cfg.stage_channels.front();
    x = conv_norm("stem", x, cfg.in_channels, c0, cfg.stem_kernel, cfg.stem_stride);
    x = relu("stem.relu", x);
    std::size_t cin = c0;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
      const std::size_t cout = cfg.stage_channels[s];
      for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
        const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        std::size_t h = conv_norm(prefix + ".c1", x, cin, cout, cfg.kernel_size, stride);
        h = relu(prefix + ".relu1", h);
        h = conv_norm(prefix + ".c2", h, cout, cout, cfg.kernel_size, 1);
        std::size_t skip = x;
        if (stride != 1 || cin != cout) skip = conv_norm(prefix + ".proj", x, cin, cout, 1, stride);
        const std::size_t sum = slot(prefix + ".sum");
        plan.ops.push_back(Plan::Add{h, skip, sum});
        x = relu(prefix + ".out", sum);
        cin = cout;
      }
    }
    const std::size_t pooled = slot("gap");
    plan.ops.push_back(Plan::Gap{x, pooled});
    const int w = param("fc.w", {cfg.embedding_dim, cin}, Plan::ParamSpec::fc_w);
    const int b = param("fc.b", {cfg.embedding_dim}, Plan::ParamSpec::bias);
    const std::size_t out = slot("embedding");
    plan.ops.push_back(Plan::Fc{pooled, out, cin, cfg.embedding_dim, w, b});
    return std::move(plan);
  }
};

std::shared_ptr<const Plan> make_plan(const EncoderConfig& cfg) {
  cfg.validate();
  return std::make_shared<const Plan>(PlanBuilder{cfg, {}}.build());
}

constexpr double kNormEps = 1e-5;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

struct Shape {
  std::size_t c, h, w;
  std::size_t plane() const { return h * w; }
  std::size_t size() const { return c * h * w; }
};

std::vector<Shape> infer_shapes(const Plan& plan, const Shape& input) {
  std::vector<Shape> shapes(plan.slot_names.size());
  shapes[0] = input;
  for (const auto& op : plan.ops) {
    std::visit(Overloaded{
                   [&](const Plan::Conv& c) {
                     const Shape& in = shapes[c.in];
                     if (in.c != c.cin)
                       throw Error(Errc::invalid_argument, "channel mismatch at " + plan.slot_names[c.out]);
                     if (in.h + 2 * c.pad < c.k || in.w + 2 * c.pad < c.k)
                       throw Error(Errc::invalid_argument,
                                   "input too small for " + plan.slot_names[c.out] + " (" + std::to_string(in.h) +
                                       "x" + std::to_string(in.w) + ")");
                     shapes[c.out] = {c.cout, (in.h + 2 * c.pad - c.k) / c.stride + 1,
                                      (in.w + 2 * c.pad - c.k) / c.stride + 1};
                   },
                   [&](const Plan::Norm& n) { shapes[n.out] = shapes[n.in]; },
                   [&](const Plan::Relu& r) { shapes[r.out] = shapes[r.in]; },
                   [&](const Plan::Add& a) { shapes[a.out] = shapes[a.a]; },
                   [&](const Plan::Gap& g) { shapes[g.out] = {shapes[g.in].c, 1, 1}; },
                   [&](const Plan::Fc& f) { shapes[f.out] = {f.cout, 1, 1}; },
               },
               op);
  }
  return shapes;
}

bool is_direct(const Plan::Conv& c) { return c.k == 1 && c.stride == 1 && c.pad == 0; }

template <typename T>
void im2col(const T* in, const Shape& is, const Plan::Conv& c, const Shape& os, std::vector<T>& col) {
  const std::size_t P = os.plane();
  col.assign(c.cin * c.k * c.k * P, T(0));
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ky = 0; ky < c.k; ++ky)
      for (std::size_t kx = 0; kx < c.k; ++kx) {
        T* dst = col.data() + ((ci * c.k + ky) * c.k + kx) * P;
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - static_cast<std::ptrdiff_t>(c.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
          const T* row = in + (ci * is.h + static_cast<std::size_t>(iy)) * is.w;
          for (std::size_t ox = 0; ox < os.w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * c.stride + kx) - static_cast<std::ptrdiff_t>(c.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(is.w)) dst[oy * os.w + ox] = row[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const std::vector<T>& col, const Shape& is, const Plan::Conv& c, const Shape& os, T* din) {
  const std::size_t P = os.plane();
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ky = 0; ky < c.k; ++ky)
      for (std::size_t kx = 0; kx < c.k; ++kx) {
        const T* src = col.data() + ((ci * c.k + ky) * c.k + kx) * P;
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - static_cast<std::ptrdiff_t>(c.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
          T* row = din + (ci * is.h + static_cast<std::size_t>(iy)) * is.w;
          for (std::size_t ox = 0; ox < os.w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * c.stride + kx) - static_cast<std::ptrdiff_t>(c.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(is.w)) row[ix] += src[oy * os.w + ox];
          }
        }
      }
}

template <typename T>
struct SampleRun {
  std::vector<std::vector<T>> slots;
  std::vector<std::vector<T>> aux;
};

// Runs one sample through the plan. `input` points at C*H*W values.
template <typename T>
void run_forward(const Plan& plan, const EncoderParams<T>& params, const std::vector<Shape>& shapes, const T* input,
                 SampleRun<T>& run) {
  run.slots.assign(plan.slot_names.size(), {});
  run.aux.assign(plan.aux_count, {});
  run.slots[0].assign(input, input + shapes[0].size());
  std::vector<T> col;
  const auto& P = params.tensors;

  for (const auto& op : plan.ops) {
    std::visit(
        Overloaded{
            [&](const Plan::Conv& c) {
              const Shape &is = shapes[c.in], &os = shapes[c.out];
              auto& out = run.slots[c.out];
              out.assign(os.size(), T(0));
              if (c.b >= 0)
                for (std::size_t co = 0; co < c.cout; ++co)
                  std::fill_n(out.data() + co * os.plane(), os.plane(), P[c.b].data[co]);
              const T* src = run.slots[c.in].data();
              if (!is_direct(c)) {
                im2col(src, is, c, os, col);
                src = col.data();
              }
              kernels::gemm_nn(c.cout, os.plane(), c.cin * c.k * c.k, P[c.w].data.data(), src, out.data());
            },
            [&](const Plan::Norm& n) {
              const Shape& s = shapes[n.in];
              const std::size_t HW = s.plane();
              const auto& in = run.slots[n.in];
              auto& out = run.slots[n.out];
              auto& aux = run.aux[n.aux];  // xhat (C*HW) then inv_std (C)
              out.resize(s.size());
              aux.resize(s.size() + s.c);
              for (std::size_t ch = 0; ch < s.c; ++ch) {
                const T* x = in.data() + ch * HW;
                double mean = 0.0;
                for (std::size_t i = 0; i < HW; ++i) mean += x[i];
                mean /= static_cast<double>(HW);
                double var = 0.0;
                for (std::size_t i = 0; i < HW; ++i) var += (x[i] - mean) * (x[i] - mean);
                var /= static_cast<double>(HW);
                const double inv_std = 1.0 / std::sqrt(var + kNormEps);
                const T g = P[n.g].data[ch], b = P[n.b].data[ch];
                T* xhat = aux.data() + ch * HW;
                T* y = out.data() + ch * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                  xhat[i] = static_cast<T>((x[i] - mean) * inv_std);
                  y[i] = g * xhat[i] + b;
                }
                aux[s.size() + ch] = static_cast<T>(inv_std);
              }
            },
            [&](const Plan::Relu& r) {
              const auto& in = run.slots[r.in];
              auto& out = run.slots[r.out];
              out.resize(in.size());
              for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
            },
            [&](const Plan::Add& a) {
              const auto &x = run.slots[a.a], &y = run.slots[a.b];
              auto& out = run.slots[a.out];
              out.resize(x.size());
              for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
            },
            [&](const Plan::Gap& g) {
              const Shape& s = shapes[g.in];
              const auto& in = run.slots[g.in];
              auto& out = run.slots[g.out];
              out.assign(s.c, T(0));
              for (std::size_t ch = 0; ch < s.c; ++ch) {
                double acc = 0.0;
                for (std::size_t i = 0; i < s.plane(); ++i) acc += in[ch * s.plane() + i];
                out[ch] = static_cast<T>(acc / static_cast<double>(s.plane()));
              }
            },
            [&](const Plan::Fc& f) {
              const auto& in = run.slots[f.in];
              auto& out = run.slots[f.out];
              out.resize(f.cout);
              const T* W = P[f.w].data.data();
              for (std::size_t j = 0; j < f.cout; ++j)
                out[j] = P[f.b].data[j] + kernels::dot(f.cin, W + j * f.cin, in.data());
            },
        },
        op);
  }
}

template <typename T>
void run_backward(const Plan& plan, const EncoderParams<T>& params, const std::vector<Shape>& shapes,
                  const SampleRun<T>& run, const T* upstream, std::vector<std::vector<T>>& pgrad,
                  std::vector<T>& input_grad) {
  std::vector<std::vector<T>> g(plan.slot_names.size());
  auto grad_of = [&](std::size_t slot) -> std::vector<T>& {
    if (g[slot].empty()) g[slot].assign(shapes[slot].size(), T(0));
    return g[slot];
  };
  g[plan.output_slot()].assign(upstream, upstream + shapes[plan.output_slot()].size());
  const auto& P = params.tensors;
  std::vector<T> col, dcol;

  for (auto it = plan.ops.rbegin(); it != plan.ops.rend(); ++it) {
    std::visit(
        Overloaded{
            [&](const Plan::Conv& c) {
              if (g[c.out].empty()) return;
              const Shape &is = shapes[c.in], &os = shapes[c.out];
              const std::size_t HW = os.plane(), K = c.cin * c.k * c.k;
              const auto& gout = g[c.out];
              if (c.b >= 0)
                for (std::size_t co = 0; co < c.cout; ++co) {
                  T acc = 0;
                  for (std::size_t i = 0; i < HW; ++i) acc += gout[co * HW + i];
                  pgrad[c.b][co] += acc;
                }
              const T* src = run.slots[c.in].data();
              if (!is_direct(c)) {
                im2col(src, is, c, os, col);
                src = col.data();
              }
              kernels::gemm_nt(c.cout, K, HW, gout.data(), src, pgrad[c.w].data());
              auto& gin = grad_of(c.in);
              if (is_direct(c)) {
                kernels::gemm_tn(c.cout, K, HW, P[c.w].data.data(), gout.data(), gin.data());
              } else {
                dcol.assign(K * HW, T(0));
                kernels::gemm_tn(c.cout, K, HW, P[c.w].data.data(), gout.data(), dcol.data());
                col2im_add(dcol, is, c, os, gin.data());
              }
            },
            [&](const Plan::Norm& n) {
              if (g[n.out].empty()) return;
              const Shape& s = shapes[n.in];
              const std::size_t HW = s.plane();
              const auto& gout = g[n.out];
              const auto& aux = run.aux[n.aux];
              auto& gin = grad_of(n.in);
              for (std::size_t ch = 0; ch < s.c; ++ch) {
                const T* dy = gout.data() + ch * HW;
                const T* xhat = aux.data() + ch * HW;
                const double inv_std = aux[s.size() + ch];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < HW; ++i) {
                  sum_dy += dy[i];
                  sum_dy_xhat += dy[i] * xhat[i];
                }
                pgrad[n.g][ch] += static_cast<T>(sum_dy_xhat);
                pgrad[n.b][ch] += static_cast<T>(sum_dy);
                const double gamma = P[n.g].data[ch];
                const double scale = gamma * inv_std / static_cast<double>(HW);
                T* dx = gin.data() + ch * HW;
                for (std::size_t i = 0; i < HW; ++i)
                  dx[i] += static_cast<T>(scale * (static_cast<double>(HW) * dy[i] - sum_dy - xhat[i] * sum_dy_xhat));
              }
            },
            [&](const Plan::Relu& r) {
              if (g[r.out].empty()) return;
              const auto& out = run.slots[r.out];
              const auto& gout = g[r.out];
              auto& gin = grad_of(r.in);
              for (std::size_t i = 0; i < out.size(); ++i)
                if (out[i] > T(0)) gin[i] += gout[i];
            },
            [&](const Plan::Add& a) {
              if (g[a.out].empty()) return;
              const auto& gout = g[a.out];
              auto& ga = grad_of(a.a);
              for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
              auto& gb = grad_of(a.b);
              for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i];
            },
            [&](const Plan::Gap& gp) {
              if (g[gp.out].empty()) return;
              const Shape& s = shapes[gp.in];
              const auto& gout = g[gp.out];
              auto& gin = grad_of(gp.in);
              const T inv = T(1) / static_cast<T>(s.plane());
              for (std::size_t ch = 0; ch < s.c; ++ch)
                for (std::size_t i = 0; i < s.plane(); ++i) gin[ch * s.plane() + i] += gout[ch] * inv;
            },
            [&](const Plan::Fc& f) {
              if (g[f.out].empty()) return;
              const auto& in = run.slots[f.in];
              const auto& gout = g[f.out];
              auto& gin = grad_of(f.in);
              const T* W = P[f.w].data.data();
              for (std::size_t j = 0; j < f.cout; ++j) {
                pgrad[f.b][j] += gout[j];
                kernels::axpy(f.cin, gout[j], in.data(), pgrad[f.w].data() + j * f.cin);
                kernels::axpy(f.cin, gout[j], W + j * f.cin, gin.data());
              }
            },
        },
        *it);
    // intermediate gradients are no longer needed once their producer has run
    std::visit([&](const auto& op) { g[op.out] = {}; }, *it);
  }
  input_grad = std::move(g[0]);
  if (input_grad.empty()) input_grad.assign(shapes[0].size(), T(0));
}

}  // namespace

// ---------------------------------------------------------------------------------------

template <typename T>
struct TapeAccess {
  static GradTape<T> make(const EncoderParams<T>& params, std::shared_ptr<const Plan> plan,
                          std::vector<std::size_t> input_shape, const std::vector<Shape>& shapes, std::size_t n) {
    GradTape<T> tape;
    tape.params_ = &params;
    tape.plan_ = std::move(plan);
    tape.input_shape_ = std::move(input_shape);
    for (const auto& s : shapes) tape.slot_shapes_.insert(tape.slot_shapes_.end(), {s.c, s.h, s.w});
    tape.samples_.resize(n);
    return tape;
  }
  static auto& samples(GradTape<T>& t) { return t.samples_; }
  static const auto& samples(const GradTape<T>& t) { return t.samples_; }
  static const Plan& plan(const GradTape<T>& t) { return *t.plan_; }
  static const EncoderParams<T>& params(const GradTape<T>& t) { return *t.params_; }
  static const std::vector<std::size_t>& input_shape(const GradTape<T>& t) { return t.input_shape_; }
  static std::vector<Shape> shapes(const GradTape<T>& t) {
    std::vector<Shape> out;
    for (std::size_t i = 0; i + 2 < t.slot_shapes_.size(); i += 3)
      out.push_back({t.slot_shapes_[i], t.slot_shapes_[i + 1], t.slot_shapes_[i + 2]});
    return out;
  }
  static void consume(GradTape<T>& t) {
    if (t.consumed_) throw Error(Errc::state, "gradient tape already consumed by a previous backward()");
    if (t.params_ == nullptr) throw Error(Errc::state, "gradient tape is empty");
    t.consumed_ = true;
  }
};

template <typename T>
GradTape<T>::GradTape() = default;
template <typename T>
GradTape<T>::~GradTape() = default;
template <typename T>
GradTape<T>::GradTape(GradTape&&) noexcept = default;
template <typename T>
GradTape<T>& GradTape<T>::operator=(GradTape&&) noexcept = default;

template <typename T>
const std::vector<T>& GradTape<T>::activation(std::size_t sample, const std::string& name) const {
  const auto& names = plan_->slot_names;
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(Errc::invalid_argument, "no activation named '" + name + "'");
  return samples_.at(sample).slots[static_cast<std::size_t>(it - names.begin())];
}

template <typename T>
std::size_t EncoderParams<T>::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(Errc::invalid_argument, "no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

template <typename T>
std::size_t EncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

namespace {

// Rebuilt per call; construction is negligible next to a forward pass.
std::shared_ptr<const Plan> plan_for(const EncoderConfig& cfg) { return make_plan(cfg); }

template <typename T>
Shape check_batch(const EncoderParams<T>& params, const Tensor<T>& batch) {
  if (batch.shape.size() != 4) throw Error(Errc::invalid_argument, "batch must be [n x C x H x W]");
  if (batch.shape[0] == 0) throw Error(Errc::invalid_argument, "batch is empty");
  if (batch.shape[1] != params.config.in_channels)
    throw Error(Errc::invalid_argument, "batch has " + std::to_string(batch.shape[1]) + " channels, encoder expects " +
                                            std::to_string(params.config.in_channels));
  if (batch.shape[2] == 0 || batch.shape[3] == 0) throw Error(Errc::invalid_argument, "batch has zero spatial size");
  if (batch.data.size() != Tensor<T>::count(batch.shape)) throw Error(Errc::invalid_argument, "batch data size mismatch");
  return {batch.shape[1], batch.shape[2], batch.shape[3]};
}

}  // namespace

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  const auto plan = plan_for(cfg);
  EncoderParams<T> p;
  p.config = cfg;
  Rng rng(seed);
  for (const auto& spec : plan->params) {
    Tensor<T> t(spec.shape);
    switch (spec.kind) {
      case Plan::ParamSpec::conv_w:
      case Plan::ParamSpec::fc_w: {
        const double fan_in = static_cast<double>(t.size() / spec.shape[0]);
        const double gain = spec.kind == Plan::ParamSpec::conv_w ? 2.0 : 1.0;
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
        for (auto& v : t.data) v = static_cast<T>(dist(rng));
        break;
      }
      case Plan::ParamSpec::norm_g:
        std::fill(t.data.begin(), t.data.end(), T(1));
        break;
      case Plan::ParamSpec::bias:
      case Plan::ParamSpec::norm_b:
        break;
    }
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(t));
    p.decay.push_back(spec.kind == Plan::ParamSpec::conv_w || spec.kind == Plan::ParamSpec::fc_w);
  }
  return p;
}

template <typename T>
ForwardResult<T> forward(const EncoderParams<T>& params, const Tensor<T>& batch, std::size_t threads) {
  const Shape in = check_batch(params, batch);
  auto plan = plan_for(params.config);
  const auto shapes = infer_shapes(*plan, in);
  const std::size_t n = batch.shape[0], d = params.config.embedding_dim;

  ForwardResult<T> result{Embeddings<T>(n, d), TapeAccess<T>::make(params, plan, batch.shape, shapes, n)};
  auto& samples = TapeAccess<T>::samples(result.tape);
  parallel_for(n, threads, [&](std::size_t i) {
    SampleRun<T> run;
    run_forward(*plan, params, shapes, batch.data.data() + i * in.size(), run);
    std::copy_n(run.slots.back().data(), d, result.embeddings.row(i));
    samples[i].slots = std::move(run.slots);
    samples[i].aux = std::move(run.aux);
  });
  return result;
}

template <typename T>
Embeddings<T> embed(const EncoderParams<T>& params, const Tensor<T>& batch, std::size_t threads) {
  const Shape in = check_batch(params, batch);
  const auto plan = plan_for(params.config);
  const auto shapes = infer_shapes(*plan, in);
  const std::size_t n = batch.shape[0], d = params.config.embedding_dim;
  Embeddings<T> out(n, d);
  parallel_for(n, threads, [&](std::size_t i) {
    SampleRun<T> run;
    run_forward(*plan, params, shapes, batch.data.data() + i * in.size(), run);
    std::copy_n(run.slots.back().data(), d, out.row(i));
  });
  return out;
}

template <typename T>
Gradients<T> backward(GradTape<T>& tape, const Embeddings<T>& upstream, std::size_t threads) {
  TapeAccess<T>::consume(tape);
  const auto& params = TapeAccess<T>::params(tape);
  const auto& plan = TapeAccess<T>::plan(tape);
  const auto shapes = TapeAccess<T>::shapes(tape);
  auto& samples = TapeAccess<T>::samples(tape);
  const std::size_t n = samples.size();
  if (upstream.rows != n || upstream.dim != params.config.embedding_dim)
    throw Error(Errc::invalid_argument, "upstream gradient must be " + std::to_string(n) + " x " +
                                            std::to_string(params.config.embedding_dim));

  std::vector<std::vector<std::vector<T>>> per_sample(n);
  Gradients<T> out;
  out.input = Tensor<T>(TapeAccess<T>::input_shape(tape));
  const std::size_t in_size = shapes[0].size();
  parallel_for(n, threads, [&](std::size_t i) {
    auto& pg = per_sample[i];
    pg.resize(params.tensors.size());
    for (std::size_t k = 0; k < pg.size(); ++k) pg[k].assign(params.tensors[k].size(), T(0));
    SampleRun<T> run{std::move(samples[i].slots), std::move(samples[i].aux)};
    std::vector<T> gin;
    run_backward(plan, params, shapes, run, upstream.row(i), pg, gin);
    std::copy_n(gin.data(), in_size, out.input.data.data() + i * in_size);
    samples[i] = {};
  });

  out.params.resize(params.tensors.size());
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    out.params[k].assign(params.tensors[k].size(), T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out.params[k].size(); ++j) out.params[k][j] += per_sample[i][k][j];
  }
  return out;
}

template <typename T>
AdamState<T> make_adam_state(const EncoderParams<T>& params) {
  AdamState<T> s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.size(), T(0));
    s.v.emplace_back(t.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(EncoderParams<T>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg, double lr) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw Error(Errc::invalid_argument, "gradient/optimizer state does not match parameters");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k].data;
    const auto& g = grads[k];
    auto &m = state.m[k], &v = state.v[k];
    if (g.size() != p.size() || m.size() != p.size()) throw Error(Errc::invalid_argument, "shape mismatch in adam_step");
    const double decay = params.decay[k] ? lr * cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
      v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p[i] = static_cast<T>(p[i] - decay * p[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <typename T, typename U>
EncoderParams<U> cast_params(const EncoderParams<T>& p) {
  EncoderParams<U> out;
  out.config = p.config;
  out.names = p.names;
  out.decay = p.decay;
  for (const auto& t : p.tensors) {
    Tensor<U> c;
    c.shape = t.shape;
    c.data.assign(t.data.begin(), t.data.end());
    out.tensors.push_back(std::move(c));
  }
  return out;
}

#define AVP_INSTANTIATE(T)                                                                                   \
  template struct EncoderParams<T>;                                                                        \
  template class GradTape<T>;                                                                              \
  template EncoderParams<T> init_params<T>(const EncoderConfig&, std::uint64_t);                           \
  template ForwardResult<T> forward<T>(const EncoderParams<T>&, const Tensor<T>&, std::size_t);            \
  template Embeddings<T> embed<T>(const EncoderParams<T>&, const Tensor<T>&, std::size_t);                 \
  template Gradients<T> backward<T>(GradTape<T>&, const Embeddings<T>&, std::size_t);                      \
  template AdamState<T> make_adam_state<T>(const EncoderParams<T>&);                                       \
  template void adam_step<T>(EncoderParams<T>&, const std::vector<std::vector<T>>&, AdamState<T>&,         \
                             const AdamConfig&, double);

AVP_INSTANTIATE(float)
AVP_INSTANTIATE(double)
#undef AVP_INSTANTIATE

template EncoderParams<double> cast_params<float, double>(const EncoderParams<float>&);
template EncoderParams<float> cast_params<double, float>(const EncoderParams<double>&);

}  // namespace avp::nn
