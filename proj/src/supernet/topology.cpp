#include "l2g/supernet/topology.hpp"

#include <algorithm>

#include "l2g/tensor/optim.hpp"

namespace l2g {

std::string to_string(LayerKind kind) { return kind == LayerKind::dense ? "dense" : "conv"; }

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv") return LayerKind::conv;
  throw ContractError("unknown layer kind '" + name + "'");
}

std::size_t LayerSpec::in_features() const {
  if (in_shape.empty()) throw ContractError("layer spec used before Topology::resolve()");
  return kind == LayerKind::dense ? numel(in_shape) : in_shape[0];
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::dense) return {in_features(), out};
  return {out, in_features(), kernel, kernel};
}

std::size_t LayerSpec::base_size() const { return numel(weight_shape()) + out; }

std::size_t LayerSpec::adapter_rank() const {
  return std::max<std::size_t>(1, std::min(in_features(), out) / 8);
}

std::size_t LayerSpec::adapter_size() const {
  if (kind == LayerKind::conv) return out * in_features();
  return adapter_rank() * (in_features() + out);
}

bool LayerSpec::adapter_supported() const {
  if (kind == LayerKind::dense) return true;
  const Conv2dGeometry one{stride, 0};
  return conv_output_extent(in_shape[1], 1, one) == pre_shape[1] &&
         conv_output_extent(in_shape[2], 1, one) == pre_shape[2];
}

void Topology::resolve() {
  if (input_shape.empty()) throw ContractError("topology: input shape missing");
  if (layers.empty()) throw ContractError("topology: at least one shareable layer required");
  if (num_classes < 2) throw ContractError("topology: at least two classes required");
  Shape current = input_shape;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerSpec& s = layers[l];
    const std::string where = "topology layer " + std::to_string(l) + ": ";
    if (s.out == 0) throw ContractError(where + "width must be positive");
    s.in_shape = current;
    if (s.kind == LayerKind::dense) {
      s.pre_shape = {s.out};
      s.out_shape = {s.out};
      if (s.pool > 1) throw ContractError(where + "pooling is only defined for conv layers");
    } else {
      if (current.size() != 3) throw ContractError(where + "conv layer needs [C,H,W] input, got " + to_string(current));
      if (s.kernel == 0 || s.stride == 0) throw ContractError(where + "kernel and stride must be positive");
      const Conv2dGeometry g{s.stride, s.padding};
      const std::size_t h = conv_output_extent(current[1], s.kernel, g);
      const std::size_t w = conv_output_extent(current[2], s.kernel, g);
      s.pre_shape = {s.out, h, w};
      const std::size_t pool = std::max<std::size_t>(1, s.pool);
      if (h % pool != 0 || w % pool != 0) {
        throw ContractError(where + "pool window " + std::to_string(pool) + " does not divide " + to_string(s.pre_shape));
      }
      s.out_shape = {s.out, h / pool, w / pool};
    }
    current = s.out_shape;
  }
}

bool Topology::resolved() const { return !layers.empty() && !layers.back().out_shape.empty(); }

std::size_t Topology::head_inputs() const {
  if (!resolved()) throw ContractError("topology used before resolve()");
  return numel(layers.back().out_shape);
}

std::size_t Topology::base_network_size() const {
  std::size_t total = 0;
  for (const auto& s : layers) total += s.base_size();
  return total;
}

Topology Topology::mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes) {
  Topology t;
  t.input_shape = {inputs};
  for (std::size_t h : hidden) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.out = h;
    t.layers.push_back(s);
  }
  t.num_classes = classes;
  t.resolve();
  return t;
}

void LayerParams::set_requires_grad(bool on) {
  weight.set_requires_grad(on);
  bias.set_requires_grad(on);
}

void AdapterParams::set_requires_grad(bool on) {
  first.set_requires_grad(on);
  if (!second.empty()) second.set_requires_grad(on);
}

LayerParams init_layer(const LayerSpec& spec, Rng& rng) {
  LayerParams p{Tensor(spec.weight_shape()), Tensor(spec.bias_shape())};
  const std::size_t fan_in = spec.kind == LayerKind::dense ? spec.in_features()
                                                           : spec.in_features() * spec.kernel * spec.kernel;
  init_fan_in_normal(p.weight, fan_in, rng);
  return p;
}

AdapterParams init_adapter(const LayerSpec& spec, Rng& rng) {
  if (spec.kind == LayerKind::conv) {
    if (!spec.adapter_supported()) {
      throw ContractError("conv adapter: 1x1 kernel at stride " + std::to_string(spec.stride) +
                          " does not match output grid " + to_string(spec.pre_shape));
    }
    return {Tensor({spec.out, spec.in_features(), 1, 1}), Tensor()};
  }
  const std::size_t r = spec.adapter_rank();
  AdapterParams a{Tensor({spec.in_features(), r}), Tensor({r, spec.out})};
  init_fan_in_normal(a.first, spec.in_features(), rng);
  return a;
}

LayerParams init_head(const Topology& topology, Rng& rng) {
  LayerParams p{Tensor({topology.head_inputs(), topology.num_classes}), Tensor({topology.num_classes})};
  init_fan_in_normal(p.weight, topology.head_inputs(), rng);
  return p;
}

Var layer_preact(const LayerSpec& spec, Var x, Var weight, Var bias) {
  if (spec.kind == LayerKind::dense) {
    if (x.value().rank() > 2) x = flatten(x);
    return affine(x, weight, bias);
  }
  return conv2d(x, weight, bias, {spec.stride, spec.padding});
}

Var adapter_preact(const LayerSpec& spec, Var x, Var first, std::optional<Var> second) {
  if (spec.kind == LayerKind::dense) {
    if (!second) throw ContractError("dense adapter needs both factors");
    if (x.value().rank() > 2) x = flatten(x);
    return matmul(matmul(x, first), *second);
  }
  return conv2d(x, first, std::nullopt, {spec.stride, 0});
}

Var layer_activation(const LayerSpec& spec, Var pre) {
  Var y = relu(pre);
  if (spec.kind == LayerKind::conv && spec.pool > 1) y = max_pool2d(y, spec.pool);
  return y;
}

Var head_logits(Var x, Var weight, Var bias) {
  if (x.value().rank() > 2) x = flatten(x);
  return affine(x, weight, bias);
}

void round_to_f32(Tensor& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace l2g
