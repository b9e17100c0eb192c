#pragma once

// Layer-list network descriptions, their parameters, and a forward pass that
// records onto a Tape when the bound parameters are watched.
//
// Builders cover the image CNN classifier, the CycleGAN generator and
// discriminator for 48x48 grayscale input, and small MLPs for 2-D toy data.
// All input and output shapes exclude the batch axis.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gaug/ops.hpp"
#include "gaug/rng.hpp"
#include "json.hpp"

namespace gaug {

enum class LayerKind { Dense, Conv, Deconv, MaxPool, ResidualBlock, Flatten, SpatialMean };

/// One row of a network table. `channels` is the output width for Dense,
/// Conv and Deconv; `stride` is the upsampling factor for Deconv.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  int kernel = 0;
  int channels = 0;
  int stride = 1;
  Padding padding = Padding::same();
  bool batch_norm = false;
  Activation activation = Activation::Identity;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  Shape input_shape;
  Shape output_shape;

  bool operator==(const NetworkSpec&) const = default;
};

inline constexpr double kBatchNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Shape chain

/// Per-sample shape after each layer; element 0 is the input shape.
inline std::vector<Shape> shape_chain(const NetworkSpec& spec) {
  std::vector<Shape> chain{spec.input_shape};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Shape& in = chain.back();
    const std::string where = spec.name + " layer " + std::to_string(i);
    auto need_image = [&] {
      if (in.size() != 3) throw DimensionError(where + " needs an HxWxC input, got " + to_string(in));
    };
    Shape out;
    switch (layer.kind) {
      case LayerKind::Dense:
        if (in.size() != 1) throw DimensionError(where + " (dense) needs a flat input, got " + to_string(in));
        out = {static_cast<std::size_t>(layer.channels)};
        break;
      case LayerKind::Conv: {
        need_image();
        std::size_t oh = 0, ow = 0;
        long pad = 0;
        const auto k = static_cast<std::size_t>(layer.kernel);
        const auto s = static_cast<std::size_t>(layer.stride);
        detail::resolve_axis(in[0], k, s, layer.padding, oh, pad);
        detail::resolve_axis(in[1], k, s, layer.padding, ow, pad);
        out = {oh, ow, static_cast<std::size_t>(layer.channels)};
        break;
      }
      case LayerKind::Deconv:
        need_image();
        out = {in[0] * static_cast<std::size_t>(layer.stride), in[1] * static_cast<std::size_t>(layer.stride),
               static_cast<std::size_t>(layer.channels)};
        break;
      case LayerKind::MaxPool: {
        need_image();
        const auto s = static_cast<std::size_t>(layer.stride);
        out = {(in[0] + s - 1) / s, (in[1] + s - 1) / s, in[2]};
        break;
      }
      case LayerKind::ResidualBlock:
        need_image();
        if (static_cast<std::size_t>(layer.channels) != in[2]) {
          throw DimensionError(where + " (residual) channel count differs from its input");
        }
        out = in;
        break;
      case LayerKind::Flatten:
        out = {numel(in)};
        break;
      case LayerKind::SpatialMean:
        need_image();
        out = {in[2]};
        break;
    }
    chain.push_back(std::move(out));
  }
  return chain;
}

/// Throws DimensionError unless the layers chain from input_shape to output_shape.
inline void validate(const NetworkSpec& spec) {
  const auto chain = shape_chain(spec);
  if (chain.back() != spec.output_shape) {
    throw DimensionError(spec.name + ": layers produce " + to_string(chain.back()) + " but output_shape is " +
                         to_string(spec.output_shape));
  }
}

// ---------------------------------------------------------------------------
// Builders

struct ImageNetOptions {
  std::size_t side = 48;
  int base_channels = 64;  // scales every conv width proportionally
};

/// Conv(3x3,64)+ReLU, MaxPool(3,s2)+Norm, Conv(3x3,128)+ReLU, MaxPool(3,s2)+Norm,
/// FC 256 x2, linear head to `classes` logits.
inline NetworkSpec build_cnn_classifier(ImageNetOptions opts = {}, int classes = 7, int fc_width = 256) {
  const int c = opts.base_channels;
  NetworkSpec spec;
  spec.name = "cnn_classifier";
  spec.input_shape = {opts.side, opts.side, 1};
  spec.output_shape = {static_cast<std::size_t>(classes)};
  spec.layers = {
      {LayerKind::Conv, 3, c, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::MaxPool, 3, 0, 2, Padding::same(), true, Activation::Identity},
      {LayerKind::Conv, 3, 2 * c, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::MaxPool, 3, 0, 2, Padding::same(), true, Activation::Identity},
      {LayerKind::Flatten},
      {LayerKind::Dense, 0, fc_width, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::Dense, 0, fc_width, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::Dense, 0, classes, 1, Padding::same(), false, Activation::Identity},
  };
  validate(spec);
  return spec;
}

/// Encoder (7x7 s1, 3x3 s2, 3x3 s2), residual blocks, two x2 deconvolutions
/// and a 7x7 projection back to one channel. The output stage uses tanh so
/// generated pixels share the [-1, 1] range of the data.
inline NetworkSpec build_cyclegan_generator(ImageNetOptions opts = {}, int residual_blocks = 6) {
  const int c = opts.base_channels;
  NetworkSpec spec;
  spec.name = "cyclegan_generator";
  spec.input_shape = {opts.side, opts.side, 1};
  spec.output_shape = {opts.side, opts.side, 1};
  spec.layers = {
      {LayerKind::Conv, 7, c, 1, Padding::zero(3), true, Activation::Relu},
      {LayerKind::Conv, 3, 2 * c, 2, Padding::zero(1), true, Activation::Relu},
      {LayerKind::Conv, 3, 4 * c, 2, Padding::zero(1), true, Activation::Relu},
  };
  for (int i = 0; i < residual_blocks; ++i) {
    spec.layers.push_back({LayerKind::ResidualBlock, 3, 4 * c, 1, Padding::zero(1), true, Activation::Relu});
  }
  spec.layers.push_back({LayerKind::Deconv, 3, 2 * c, 2, Padding::same(), true, Activation::Relu});
  spec.layers.push_back({LayerKind::Deconv, 3, c, 2, Padding::same(), true, Activation::Relu});
  spec.layers.push_back({LayerKind::Conv, 7, 1, 1, Padding::zero(3), false, Activation::Tanh});
  validate(spec);
  return spec;
}

/// Four 4x4 stride-2 Conv-BN-ReLU stages (64..512), a 4x4 stride-1 conv to a
/// one-channel patch map, then the mean over patches: one raw score per sample.
inline NetworkSpec build_cyclegan_discriminator(ImageNetOptions opts = {}) {
  const int c = opts.base_channels;
  NetworkSpec spec;
  spec.name = "cyclegan_discriminator";
  spec.input_shape = {opts.side, opts.side, 1};
  spec.output_shape = {1};
  for (int mult : {1, 2, 4, 8}) {
    spec.layers.push_back({LayerKind::Conv, 4, mult * c, 2, Padding::zero(1), true, Activation::Relu});
  }
  spec.layers.push_back({LayerKind::Conv, 4, 1, 1, Padding::same(), false, Activation::Identity});
  spec.layers.push_back({LayerKind::SpatialMean});
  validate(spec);
  return spec;
}

inline NetworkSpec build_mlp(std::string name, int in, int hidden, int out) {
  if (hidden < 1) throw ParameterError(name + ": hidden width must be >= 1");
  NetworkSpec spec;
  spec.name = std::move(name);
  spec.input_shape = {static_cast<std::size_t>(in)};
  spec.output_shape = {static_cast<std::size_t>(out)};
  spec.layers = {
      {LayerKind::Dense, 0, hidden, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::Dense, 0, hidden, 1, Padding::same(), false, Activation::Relu},
      {LayerKind::Dense, 0, out, 1, Padding::same(), false, Activation::Identity},
  };
  validate(spec);
  return spec;
}

/// 2 -> hidden -> hidden -> 2.
inline NetworkSpec build_toy_generator(int hidden = 64) { return build_mlp("toy_generator", 2, hidden, 2); }

/// 2 -> hidden -> hidden -> 1 raw score.
inline NetworkSpec build_toy_discriminator(int hidden = 64) { return build_mlp("toy_discriminator", 2, hidden, 1); }

inline NetworkSpec build_mlp_classifier(int in, int classes, int hidden = 64) {
  return build_mlp("mlp_classifier", in, hidden, classes);
}

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterSet = std::vector<Parameter>;

struct Network {
  NetworkSpec spec;
  ParameterSet params;
  std::vector<BatchNormStats> bn_stats;
};

inline std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

namespace detail {

struct ParamSlot {
  std::string name;
  Shape shape;
  enum class Init { Weight, Zero, One } init;
};

inline void push_bn(std::vector<ParamSlot>& slots, const std::string& prefix, std::size_t c) {
  slots.push_back({prefix + "gamma", {c}, ParamSlot::Init::One});
  slots.push_back({prefix + "beta", {c}, ParamSlot::Init::Zero});
}

// Parameter layout in forward-pass order, plus the BN channel counts.
inline std::vector<ParamSlot> parameter_layout(const NetworkSpec& spec, std::vector<std::size_t>* bn_channels) {
  const auto chain = shape_chain(spec);
  std::vector<ParamSlot> slots;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Shape& in = chain[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    const auto k = static_cast<std::size_t>(layer.kernel);
    const auto out_c = static_cast<std::size_t>(layer.channels);
    std::size_t bn_c = 0;
    switch (layer.kind) {
      case LayerKind::Dense:
        slots.push_back({p + "weight", {in[0], out_c}, ParamSlot::Init::Weight});
        slots.push_back({p + "bias", {out_c}, ParamSlot::Init::Zero});
        bn_c = out_c;
        break;
      case LayerKind::Conv:
        slots.push_back({p + "weight", {k, k, in[2], out_c}, ParamSlot::Init::Weight});
        slots.push_back({p + "bias", {out_c}, ParamSlot::Init::Zero});
        bn_c = out_c;
        break;
      case LayerKind::Deconv:
        slots.push_back({p + "weight", {k, k, out_c, in[2]}, ParamSlot::Init::Weight});
        slots.push_back({p + "bias", {out_c}, ParamSlot::Init::Zero});
        bn_c = out_c;
        break;
      case LayerKind::MaxPool:
        bn_c = in[2];
        break;
      case LayerKind::ResidualBlock:
        for (const char* conv : {"conv1.", "conv2."}) {
          slots.push_back({p + conv + "weight", {k, k, out_c, out_c}, ParamSlot::Init::Weight});
          slots.push_back({p + conv + "bias", {out_c}, ParamSlot::Init::Zero});
          if (layer.batch_norm) {
            push_bn(slots, p + conv + "bn.", out_c);
            if (bn_channels) bn_channels->push_back(out_c);
          }
        }
        continue;
      case LayerKind::Flatten:
      case LayerKind::SpatialMean:
        continue;
    }
    if (layer.batch_norm) {
      push_bn(slots, p + "bn.", bn_c);
      if (bn_channels) bn_channels->push_back(bn_c);
    }
  }
  return slots;
}

}  // namespace detail

/// Gaussian(0, 0.02) weights, zero biases, BN gamma = 1 and beta = 0.
/// Deterministic per seed.
inline Network init_weights(const NetworkSpec& spec, std::uint64_t seed, double weight_std = 0.02) {
  validate(spec);
  Network net;
  net.spec = spec;
  std::vector<std::size_t> bn_channels;
  Rng rng(seed);
  for (auto& slot : detail::parameter_layout(spec, &bn_channels)) {
    std::vector<double> values(numel(slot.shape));
    switch (slot.init) {
      case detail::ParamSlot::Init::Weight:
        for (double& v : values) v = rng.normal(0.0, weight_std);
        break;
      case detail::ParamSlot::Init::Zero:
        break;
      case detail::ParamSlot::Init::One:
        std::fill(values.begin(), values.end(), 1.0);
        break;
    }
    net.params.push_back({std::move(slot.name), Tensor(std::move(slot.shape), std::move(values))});
  }
  for (std::size_t c : bn_channels) net.bn_stats.emplace_back(c);
  return net;
}

/// Parameter values as tensors: watched on `tape` when given, constants otherwise.
inline std::vector<Tensor> bind_params(const ParameterSet& params, Tape* tape) {
  std::vector<Tensor> bound;
  bound.reserve(params.size());
  for (const auto& p : params) bound.push_back(tape ? tape->watch(p.value) : p.value);
  return bound;
}

struct ForwardContext {
  BatchNormMode mode = BatchNormMode::Train;
  /// Running statistics: read in Eval mode, updated in Train mode when set.
  std::vector<BatchNormStats>* stats = nullptr;
};

/// Runs `spec` on a batch x of shape [N, input_shape...].
inline Tensor forward(const NetworkSpec& spec, std::span<const Tensor> params, const Tensor& x,
                      ForwardContext ctx = {}) {
  Shape expected{x.dim(0)};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (x.shape() != expected) {
    throw DimensionError(spec.name + ": input " + to_string(x.shape()) + " does not match " + to_string(expected));
  }
  std::size_t cursor = 0;
  std::size_t bn_index = 0;
  auto next = [&]() -> const Tensor& {
    if (cursor >= params.size()) throw ContractError(spec.name + ": too few parameters bound");
    return params[cursor++];
  };
  auto normalize = [&](const Tensor& h) {
    const Tensor& gamma = next();
    const Tensor& beta = next();
    BatchNormStats* stats = nullptr;
    if (ctx.stats) {
      if (bn_index >= ctx.stats->size()) throw ContractError(spec.name + ": missing batch-norm statistics");
      stats = &(*ctx.stats)[bn_index];
    }
    ++bn_index;
    return batch_norm(h, gamma, beta, kBatchNormEps, ctx.mode, stats);
  };

  Tensor h = x;
  for (const LayerSpec& layer : spec.layers) {
    switch (layer.kind) {
      case LayerKind::Dense: {
        const Tensor& w = next();
        const Tensor& b = next();
        h = add_bias(matmul(h, w), b);
        break;
      }
      case LayerKind::Conv: {
        const Tensor& w = next();
        const Tensor& b = next();
        h = add_bias(conv2d(h, w, layer.stride, layer.padding), b);
        break;
      }
      case LayerKind::Deconv: {
        const Tensor& w = next();
        const Tensor& b = next();
        h = add_bias(deconv2d(h, w, layer.stride), b);
        break;
      }
      case LayerKind::MaxPool:
        h = max_pool2d(h, layer.kernel, layer.stride);
        break;
      case LayerKind::ResidualBlock: {
        // x + BN(conv(ReLU(BN(conv(x)))))
        Tensor r = h;
        for (int conv = 0; conv < 2; ++conv) {
          const Tensor& w = next();
          const Tensor& b = next();
          r = add_bias(conv2d(r, w, layer.stride, layer.padding), b);
          if (layer.batch_norm) r = normalize(r);
          if (conv == 0) r = activation(r, layer.activation);
        }
        h = add(h, r);
        continue;
      }
      case LayerKind::Flatten:
        h = reshape(h, {h.dim(0), h.size() / h.dim(0)});
        continue;
      case LayerKind::SpatialMean:
        h = spatial_mean(h);
        continue;
    }
    if (layer.batch_norm) h = normalize(h);
    h = activation(h, layer.activation);
  }
  if (cursor != params.size()) throw ContractError(spec.name + ": too many parameters bound");
  return h;
}

/// Tape-free evaluation-mode forward pass.
inline Tensor infer(const Network& net, const Tensor& x) {
  auto stats = net.bn_stats;
  return forward(net.spec, bind_params(net.params, nullptr), x, {BatchNormMode::Eval, &stats});
}

// ---------------------------------------------------------------------------
// JSON

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::Dense, "dense"},
                                         {LayerKind::Conv, "conv"},
                                         {LayerKind::Deconv, "deconv"},
                                         {LayerKind::MaxPool, "maxpool"},
                                         {LayerKind::ResidualBlock, "residual"},
                                         {LayerKind::Flatten, "flatten"},
                                         {LayerKind::SpatialMean, "spatial_mean"}})

NLOHMANN_JSON_SERIALIZE_ENUM(Activation,
                             {{Activation::Identity, "identity"}, {Activation::Relu, "relu"}, {Activation::Tanh, "tanh"}})

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = {{"kind", l.kind},
       {"kernel", l.kernel},
       {"channels", l.channels},
       {"stride", l.stride},
       {"padding", l.padding.kind == Padding::Kind::Same ? nlohmann::json("same") : nlohmann::json(l.padding.amount)},
       {"batch_norm", l.batch_norm},
       {"activation", l.activation}};
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  j.at("kind").get_to(l.kind);
  l.kernel = j.value("kernel", 0);
  l.channels = j.value("channels", 0);
  l.stride = j.value("stride", 1);
  const auto& pad = j.at("padding");
  l.padding = pad.is_string() ? Padding::same() : Padding::zero(pad.get<int>());
  l.batch_norm = j.value("batch_norm", false);
  j.at("activation").get_to(l.activation);
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"name", s.name}, {"input_shape", s.input_shape}, {"output_shape", s.output_shape}, {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  j.at("name").get_to(s.name);
  j.at("input_shape").get_to(s.input_shape);
  j.at("output_shape").get_to(s.output_shape);
  j.at("layers").get_to(s.layers);
  validate(s);
}

}  // namespace gaug
