#pragma once

#include <optional>
#include <string>
#include <vector>

#include "l2g/tensor/ops.hpp"
#include "l2g/tensor/rng.hpp"

namespace l2g {

enum class LayerKind { dense, conv };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One shareable layer of the fixed global topology. Every layer is followed
/// by ReLU; conv layers optionally by non-overlapping max pooling.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t out = 0;  ///< units (dense) or filters (conv)
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 1;  ///< pooling window; 1 disables

  // Filled by Topology::resolve(); shapes exclude the batch axis.
  Shape in_shape;
  Shape pre_shape;  ///< before activation and pooling
  Shape out_shape;

  std::size_t in_features() const;  ///< dense: flattened input; conv: input channels
  Shape weight_shape() const;
  Shape bias_shape() const { return {out}; }
  /// Weights plus bias of one full-size copy.
  std::size_t base_size() const;
  /// Dense adapters factor as U [I,r] V [r,O] with r = max(1, floor(min(I,O)/8)).
  std::size_t adapter_rank() const;
  std::size_t adapter_size() const;
  /// Conv adapters are 1x1 kernels run at the layer's stride; they must land on
  /// the same output grid as the full kernel.
  bool adapter_supported() const;
};

struct Topology {
  Shape input_shape;  ///< per example: [D] or [C,H,W]
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  /// Validates the chain and fills derived shapes; throws ContractError.
  void resolve();
  bool resolved() const;
  std::size_t head_inputs() const;
  std::size_t head_size() const { return head_inputs() * num_classes + num_classes; }
  /// Sum of base_size() over shareable layers.
  std::size_t base_network_size() const;

  static Topology mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes);
};

struct LayerParams {
  Tensor weight;
  Tensor bias;
  std::size_t count() const { return weight.size() + bias.size(); }
  void set_requires_grad(bool on);
};

/// conv: `first` is the [O,C,1,1] kernel and `second` is empty.
/// dense: `first` is U [I,r], `second` is V [r,O].
struct AdapterParams {
  Tensor first;
  Tensor second;
  std::size_t count() const { return first.size() + second.size(); }
  void set_requires_grad(bool on);
};

LayerParams init_layer(const LayerSpec& spec, Rng& rng);
/// Zero on the output path, so a fresh adapter leaves the layer function unchanged.
AdapterParams init_adapter(const LayerSpec& spec, Rng& rng);
LayerParams init_head(const Topology& topology, Rng& rng);

/// Pre-activation output of a full layer copy.
Var layer_preact(const LayerSpec& spec, Var x, Var weight, Var bias);
/// Pre-activation contribution of an adapter.
Var adapter_preact(const LayerSpec& spec, Var x, Var first, std::optional<Var> second);
/// ReLU then pooling.
Var layer_activation(const LayerSpec& spec, Var pre);
Var head_logits(Var x, Var weight, Var bias);

/// Rounds every element to the nearest 32-bit float.
void round_to_f32(Tensor& t);

}  // namespace l2g
