#pragma once

// Configurable small U-Net: per level two same-padding convs + relu then a
// 2x2 maxpool; decoder mirrors with a 2x2 stride-2 up-convolution, skip
// concat and two convs; final 1x1 conv + sigmoid gives per-pixel clear-sky
// probabilities.

#include <cstdint>
#include <string>
#include <vector>

#include "cloudmask/graph.hpp"
#include "cloudmask/rng.hpp"
#include "cloudmask/tensor.hpp"

namespace cloudmask {

struct UNetConfig {
  int in_channels = 9;
  int depth = 2;
  int base_channels = 8;
  int kernel_size = 3;
  int patch_size = 64;

  void validate() const;
  bool operator==(const UNetConfig&) const = default;
};

// One learnable tensor slot: its name, shape and the fan-in used for the
// Kaiming-uniform bound. The order of these specs is a pure function of the
// config; the checkpoint layout depends on it.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::int64_t fan_in;
};

std::vector<ParamSpec> unet_param_specs(const UNetConfig& config);

std::int64_t param_count(const UNetConfig& config);

template <typename T>
struct NamedTensorT {
  std::string name;
  TensorT<T> tensor;
};

template <typename T>
struct ModelParamsT {
  UNetConfig config;
  std::vector<NamedTensorT<T>> tensors;

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) n += t.tensor.numel();
    return n;
  }
};

using ModelParams = ModelParamsT<float>;

// Kaiming-uniform weights (bound sqrt(6 / fan_in)) drawn from a stream named
// after the tensor, so the bytes for one tensor do not depend on the others;
// biases start at zero. Identical seed yields identical bytes.
template <typename T>
ModelParamsT<T> build_unet_t(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng init = Rng(seed).stream("unet-init");
  ModelParamsT<T> params;
  params.config = config;
  for (const ParamSpec& spec : unet_param_specs(config)) {
    TensorT<T> t(spec.shape);
    if (spec.fan_in > 0) {
      Rng rng = init.stream(spec.name);
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    t.requires_grad = true;
    params.tensors.push_back({spec.name, std::move(t)});
  }
  return params;
}

inline ModelParams build_unet(const UNetConfig& config, std::uint64_t seed) {
  return build_unet_t<float>(config, seed);
}

// Wires the network onto a graph. `param_ids` must hold leaf ids in
// unet_param_specs order. Returns the probability node.
template <typename T>
typename GraphT<T>::NodeId unet_forward_graph(GraphT<T>& g, const UNetConfig& config,
                                              const std::vector<typename GraphT<T>::NodeId>& param_ids,
                                              typename GraphT<T>::NodeId input) {
  using NodeId = typename GraphT<T>::NodeId;
  const TensorT<T>& in = g.value(input);
  require_rank(in, 4, "unet_forward input");
  if (in.dim(1) != config.in_channels) {
    throw ShapeError("unet_forward: input " + shape_str(in.shape) + " does not have " +
                     std::to_string(config.in_channels) + " channels");
  }
  const int div = 1 << config.depth;
  if (in.dim(2) % div != 0 || in.dim(3) % div != 0) {
    throw ShapeError("unet_forward: spatial dims of " + shape_str(in.shape) + " not divisible by 2^depth = " +
                     std::to_string(div));
  }

  size_t next = 0;
  auto take = [&]() { return param_ids.at(next++); };
  auto conv_block = [&](NodeId x) {
    NodeId w1 = take(), b1 = take(), w2 = take(), b2 = take();
    x = g.relu(g.conv2d(x, w1, b1, Padding::kSame));
    return g.relu(g.conv2d(x, w2, b2, Padding::kSame));
  };

  std::vector<NodeId> skips;
  NodeId x = input;
  for (int level = 0; level < config.depth; ++level) {
    x = conv_block(x);
    skips.push_back(x);
    x = g.maxpool2(x);
  }
  x = conv_block(x);
  for (int level = config.depth - 1; level >= 0; --level) {
    NodeId uw = take(), ub = take();
    NodeId up = g.upconv2(x, uw, ub);
    x = g.concat_channels(skips[static_cast<size_t>(level)], up);
    x = conv_block(x);
  }
  NodeId ow = take(), ob = take();
  if (next != param_ids.size()) throw Error("unet_forward: parameter list does not match config");
  return g.sigmoid(g.conv2d(x, ow, ob, Padding::kSame));
}

// Plain inference: batch (N, C, P, P) of measurements to (N, 1, P, P)
// probabilities.
template <typename T>
TensorT<T> unet_forward_t(const ModelParamsT<T>& params, const TensorT<T>& batch) {
  GraphT<T> g;
  std::vector<typename GraphT<T>::NodeId> ids;
  ids.reserve(params.tensors.size());
  for (const auto& nt : params.tensors) {
    TensorT<T> t = nt.tensor;
    t.requires_grad = false;
    ids.push_back(g.leaf(std::move(t)));
  }
  typename GraphT<T>::NodeId probs = unet_forward_graph(g, params.config, ids, g.leaf(batch));
  return g.value(probs);
}

inline Tensor unet_forward(const ModelParams& params, const Tensor& batch) {
  return unet_forward_t<float>(params, batch);
}

}  // namespace cloudmask
