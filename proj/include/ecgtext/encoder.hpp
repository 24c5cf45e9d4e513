#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ecgtext/nn_ops.hpp"
#include "ecgtext/rng.hpp"
#include "ecgtext/tensor.hpp"

namespace ecgtext {

inline constexpr double kInitialTemperature = 0.07;

// Backbone geometry. Defaults give the standard 18-layer residual recipe
// with 1-d kernels; tests shrink every axis to run gradient checks fast.
struct EncoderConfig {
  int in_leads = 12;
  std::vector<int> stage_channels{64, 128, 256, 512};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_padding = 3;
  int pool_kernel = 3;
  int pool_stride = 2;
  int pool_padding = 1;
  int projection_dim = 128;

  bool operator==(const EncoderConfig&) const = default;

  void validate() const {
    if (in_leads < 1) throw std::invalid_argument("encoder config: in_leads must be >= 1");
    if (projection_dim < 1) {
      throw std::invalid_argument("encoder config: projection_dim must be >= 1");
    }
    if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size()) {
      throw std::invalid_argument("encoder config: stage_channels and blocks_per_stage must be "
                                  "non-empty and equal-length");
    }
    for (std::size_t i = 1; i < stage_channels.size(); ++i) {
      if (stage_channels[i] <= stage_channels[i - 1]) {
        throw std::invalid_argument("encoder config: stage_channels must be strictly increasing");
      }
    }
    for (int b : blocks_per_stage) {
      if (b < 1) throw std::invalid_argument("encoder config: blocks_per_stage must be >= 1");
    }
  }

  // Overall temporal downsampling: stem conv * stem pool * one stride-2
  // entry per stage after the first. Inputs shorter than this collapse to
  // zero-length features.
  int min_input_samples() const {
    int f = stem_stride * pool_stride;
    for (std::size_t i = 1; i < stage_channels.size(); ++i) f *= 2;
    return f;
  }

  int feature_dim() const { return stage_channels.back(); }
};

template <typename S>
struct ConvLayer {
  Tensor<S> weight;  // [C_out, C_in, K]
  int stride = 1;
  int padding = 0;
};

template <typename S>
struct BatchNormLayer {
  Tensor<S> gamma;
  Tensor<S> beta;
  Tensor<S> running_mean;
  Tensor<S> running_var;
};

template <typename S>
struct ResidualBlock {
  ConvLayer<S> conv1;
  BatchNormLayer<S> bn1;
  ConvLayer<S> conv2;
  BatchNormLayer<S> bn2;
  std::optional<ConvLayer<S>> down_conv;  // 1x1 stride-matching shortcut
  std::optional<BatchNormLayer<S>> down_bn;
};

enum class Mode { train, eval };

// Every trainable tensor of the backbone, projection head, and the
// log-parameterized temperature (tau = exp(log_temperature) stays positive
// under any optimizer step).
template <typename S>
struct ModelParams {
  EncoderConfig config;
  ConvLayer<S> stem_conv;
  BatchNormLayer<S> stem_bn;
  std::vector<std::vector<ResidualBlock<S>>> stages;
  Tensor<S> proj_weight;  // [D, feature_dim]
  Tensor<S> proj_bias;    // [D]
  Tensor<S> log_temperature;  // [1]

  S temperature() const { return std::exp(log_temperature.item()); }

  struct NamedParam {
    std::string name;
    Tensor<S>* tensor;
    bool decay_exempt;  // batch-norm scales/shifts and the temperature
  };

  // Trainable tensors in a fixed traversal order (also the checkpoint order).
  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    auto bn = [&out](const std::string& prefix, BatchNormLayer<S>& layer) {
      out.push_back({prefix + ".gamma", &layer.gamma, true});
      out.push_back({prefix + ".beta", &layer.beta, true});
    };
    out.push_back({"stem.conv.weight", &stem_conv.weight, false});
    bn("stem.bn", stem_bn);
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        auto& blk = stages[s][b];
        out.push_back({p + ".conv1.weight", &blk.conv1.weight, false});
        bn(p + ".bn1", blk.bn1);
        out.push_back({p + ".conv2.weight", &blk.conv2.weight, false});
        bn(p + ".bn2", blk.bn2);
        if (blk.down_conv) {
          out.push_back({p + ".down.conv.weight", &blk.down_conv->weight, false});
          bn(p + ".down.bn", *blk.down_bn);
        }
      }
    out.push_back({"proj.weight", &proj_weight, false});
    out.push_back({"proj.bias", &proj_bias, false});
    out.push_back({"log_temperature", &log_temperature, true});
    return out;
  }

  // Non-trainable running statistics, same ordering rules.
  std::vector<NamedParam> state_tensors() {
    std::vector<NamedParam> out;
    auto bn = [&out](const std::string& prefix, BatchNormLayer<S>& layer) {
      out.push_back({prefix + ".running_mean", &layer.running_mean, true});
      out.push_back({prefix + ".running_var", &layer.running_var, true});
    };
    bn("stem.bn", stem_bn);
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        auto& blk = stages[s][b];
        bn(p + ".bn1", blk.bn1);
        bn(p + ".bn2", blk.bn2);
        if (blk.down_bn) bn(p + ".down.bn", *blk.down_bn);
      }
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto& p : parameters()) n += p.tensor->numel();
    return n;
  }

  ModelParams clone() {
    ModelParams copy;
    copy.config = config;
    copy.stem_conv = {stem_conv.weight.clone_detached(), stem_conv.stride, stem_conv.padding};
    auto clone_bn = [](const BatchNormLayer<S>& b) {
      return BatchNormLayer<S>{b.gamma.clone_detached(), b.beta.clone_detached(),
                               b.running_mean.clone_detached(), b.running_var.clone_detached()};
    };
    copy.stem_bn = clone_bn(stem_bn);
    copy.stages.resize(stages.size());
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (auto& blk : stages[s]) {
        ResidualBlock<S> nb;
        nb.conv1 = {blk.conv1.weight.clone_detached(), blk.conv1.stride, blk.conv1.padding};
        nb.bn1 = clone_bn(blk.bn1);
        nb.conv2 = {blk.conv2.weight.clone_detached(), blk.conv2.stride, blk.conv2.padding};
        nb.bn2 = clone_bn(blk.bn2);
        if (blk.down_conv) {
          nb.down_conv = ConvLayer<S>{blk.down_conv->weight.clone_detached(),
                                      blk.down_conv->stride, blk.down_conv->padding};
          nb.down_bn = clone_bn(*blk.down_bn);
        }
        copy.stages[s].push_back(std::move(nb));
      }
    copy.proj_weight = proj_weight.clone_detached();
    copy.proj_bias = proj_bias.clone_detached();
    copy.log_temperature = log_temperature.clone_detached();
    return copy;
  }
};

namespace detail {

// He-style fan-in uniform: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
template <typename S>
Tensor<S> he_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in, SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  auto t = Tensor<S>::zeros(std::move(shape), /*requires_grad=*/true);
  for (auto& v : t.raw_data()) v = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

template <typename S>
BatchNormLayer<S> make_bn(std::int64_t channels) {
  return BatchNormLayer<S>{Tensor<S>::full({channels}, S(1), true),
                           Tensor<S>::zeros({channels}, true), Tensor<S>::zeros({channels}),
                           Tensor<S>::full({channels}, S(1))};
}

}  // namespace detail

template <typename S>
ModelParams<S> build_encoder(const EncoderConfig& config, std::uint64_t seed,
                             double tau_init = kInitialTemperature) {
  config.validate();
  if (!(tau_init > 0.0)) throw std::invalid_argument("build_encoder: tau_init must be positive");
  SplitMix64 rng(seed);
  ModelParams<S> p;
  p.config = config;
  const std::int64_t c0 = config.stage_channels[0];
  p.stem_conv = {detail::he_uniform<S>({c0, config.in_leads, config.stem_kernel},
                                       static_cast<std::int64_t>(config.in_leads) *
                                           config.stem_kernel,
                                       rng),
                 config.stem_stride, config.stem_padding};
  p.stem_bn = detail::make_bn<S>(c0);
  std::int64_t in_ch = c0;
  p.stages.resize(config.stage_channels.size());
  for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
    const std::int64_t out_ch = config.stage_channels[s];
    for (int b = 0; b < config.blocks_per_stage[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      ResidualBlock<S> blk;
      blk.conv1 = {detail::he_uniform<S>({out_ch, in_ch, 3}, in_ch * 3, rng), stride, 1};
      blk.bn1 = detail::make_bn<S>(out_ch);
      blk.conv2 = {detail::he_uniform<S>({out_ch, out_ch, 3}, out_ch * 3, rng), 1, 1};
      blk.bn2 = detail::make_bn<S>(out_ch);
      if (stride != 1 || in_ch != out_ch) {
        blk.down_conv = ConvLayer<S>{detail::he_uniform<S>({out_ch, in_ch, 1}, in_ch, rng),
                                     stride, 0};
        blk.down_bn = detail::make_bn<S>(out_ch);
      }
      p.stages[s].push_back(std::move(blk));
      in_ch = out_ch;
    }
  }
  p.proj_weight = detail::he_uniform<S>({config.projection_dim, config.feature_dim()},
                                        config.feature_dim(), rng);
  p.proj_bias = Tensor<S>::zeros({config.projection_dim}, true);
  p.log_temperature = Tensor<S>::scalar(static_cast<S>(std::log(tau_init)), true);
  return p;
}

// Backbone forward: [N, leads, samples] -> raw feature embedding [N, feature_dim].
// Training mode drives batch statistics (and updates running stats); eval
// mode is a pure function of (params, input).
template <typename S>
Tensor<S> encode(ModelParams<S>& params, const Tensor<S>& batch, Mode mode) {
  const auto& cfg = params.config;
  if (batch.dim() != 3 || batch.size(1) != cfg.in_leads) {
    throw ShapeError("encode: expected [N," + std::to_string(cfg.in_leads) +
                     ",samples] input, got " + detail::shape_string(batch.shape()));
  }
  if (batch.size(2) < cfg.min_input_samples()) {
    throw ShapeError("encode: input too short, need >= " +
                     std::to_string(cfg.min_input_samples()) + " samples, got " +
                     std::to_string(batch.size(2)));
  }
  const bool training = mode == Mode::train;
  auto bn = [training](const Tensor<S>& x, BatchNormLayer<S>& layer) {
    return batchnorm1d(x, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                       training);
  };
  auto x = conv1d(batch, params.stem_conv.weight, params.stem_conv.stride,
                  params.stem_conv.padding);
  x = relu(bn(x, params.stem_bn));
  x = maxpool1d(x, cfg.pool_kernel, cfg.pool_stride, cfg.pool_padding);
  for (auto& stage : params.stages)
    for (auto& blk : stage) {
      auto shortcut = x;
      if (blk.down_conv) {
        shortcut = bn(conv1d(x, blk.down_conv->weight, blk.down_conv->stride,
                             blk.down_conv->padding),
                      *blk.down_bn);
      }
      auto y = relu(bn(conv1d(x, blk.conv1.weight, blk.conv1.stride, blk.conv1.padding),
                       blk.bn1));
      y = bn(conv1d(y, blk.conv2.weight, blk.conv2.stride, blk.conv2.padding), blk.bn2);
      x = relu(add(y, shortcut));
    }
  return global_avg_pool1d(x);
}

// Projection head into the shared embedding space. No normalization here;
// cosine similarity divides by the norms itself.
template <typename S>
Tensor<S> project(ModelParams<S>& params, const Tensor<S>& raw) {
  if (raw.dim() != 2 || raw.size(1) != params.config.feature_dim()) {
    throw ShapeError("project: expected [N," + std::to_string(params.config.feature_dim()) +
                     "] features, got " + detail::shape_string(raw.shape()));
  }
  return linear(raw, params.proj_weight, params.proj_bias);
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, config block, named f32 tensors.
// ---------------------------------------------------------------------------

struct CheckpointExtras {
  std::uint32_t text_adapter_in_dim = 0;  // 0: provider dimension equals D
  std::uint64_t text_adapter_seed = 0;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'E', 'C', 'G', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& what) : b_(bytes), what_(what) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(std::uint8_t(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(std::uint8_t(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > b_.size()) throw FormatError(what_ + ": truncated file");
  }
  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename S>
void save_checkpoint(ModelParams<S>& params, const std::filesystem::path& path,
                     const CheckpointExtras& extras = {}) {
  std::string out;
  out.append(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::put_u32(out, detail::kCheckpointVersion);
  const auto& cfg = params.config;
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.in_leads));
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.stage_channels.size()));
  for (int c : cfg.stage_channels) detail::put_u32(out, static_cast<std::uint32_t>(c));
  for (int b : cfg.blocks_per_stage) detail::put_u32(out, static_cast<std::uint32_t>(b));
  for (int v : {cfg.stem_kernel, cfg.stem_stride, cfg.stem_padding, cfg.pool_kernel,
                cfg.pool_stride, cfg.pool_padding, cfg.projection_dim}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_u32(out, extras.text_adapter_in_dim);
  detail::put_u64(out, extras.text_adapter_seed);

  auto named = params.parameters();
  for (auto& s : params.state_tensors()) named.push_back(s);
  detail::put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (auto& p : named) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.tensor->dim()));
    for (std::int64_t d : p.tensor->shape()) detail::put_u64(out, static_cast<std::uint64_t>(d));
    for (S v : p.tensor->data()) detail::put_f32(out, static_cast<float>(v));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw LoadError("failed writing checkpoint: " + path.string());
}

template <typename S>
struct LoadedCheckpoint {
  ModelParams<S> params;
  CheckpointExtras extras;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, "checkpoint " + path.string());
  if (r.bytes(sizeof(detail::kCheckpointMagic)) !=
      std::string(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic))) {
    throw FormatError("checkpoint " + path.string() + ": bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                      std::to_string(version));
  }
  EncoderConfig cfg;
  cfg.in_leads = static_cast<int>(r.u32());
  const std::uint32_t n_stages = r.u32();
  if (n_stages == 0 || n_stages > 64) {
    throw FormatError("checkpoint " + path.string() + ": implausible stage count");
  }
  cfg.stage_channels.assign(n_stages, 0);
  cfg.blocks_per_stage.assign(n_stages, 0);
  for (auto& c : cfg.stage_channels) c = static_cast<int>(r.u32());
  for (auto& b : cfg.blocks_per_stage) b = static_cast<int>(r.u32());
  cfg.stem_kernel = static_cast<int>(r.u32());
  cfg.stem_stride = static_cast<int>(r.u32());
  cfg.stem_padding = static_cast<int>(r.u32());
  cfg.pool_kernel = static_cast<int>(r.u32());
  cfg.pool_stride = static_cast<int>(r.u32());
  cfg.pool_padding = static_cast<int>(r.u32());
  cfg.projection_dim = static_cast<int>(r.u32());
  CheckpointExtras extras;
  extras.text_adapter_in_dim = r.u32();
  extras.text_adapter_seed = r.u64();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError("checkpoint " + path.string() + ": invalid config: " + e.what());
  }

  LoadedCheckpoint<S> result{build_encoder<S>(cfg, /*seed=*/0), extras};
  auto named = result.params.parameters();
  for (auto& s : result.params.state_tensors()) named.push_back(s);
  const std::uint32_t count = r.u32();
  if (count != named.size()) {
    throw FormatError("checkpoint " + path.string() + ": config mismatch, expected " +
                      std::to_string(named.size()) + " tensors, file has " +
                      std::to_string(count));
  }
  for (auto& p : named) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    if (name != p.name) {
      throw FormatError("checkpoint " + path.string() + ": config mismatch, expected tensor '" +
                        p.name + "', file has '" + name + "'");
    }
    const std::uint32_t ndim = r.u32();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = static_cast<std::int64_t>(r.u64());
    if (dims != p.tensor->shape()) {
      throw FormatError("checkpoint " + path.string() + ": shape mismatch for '" + p.name + "'");
    }
    auto dst = p.tensor->raw_data();
    for (std::int64_t i = 0; i < p.tensor->numel(); ++i) dst[i] = static_cast<S>(r.f32());
  }
  if (!r.exhausted()) {
    throw FormatError("checkpoint " + path.string() + ": trailing bytes");
  }
  return result;
}

}  // namespace ecgtext
