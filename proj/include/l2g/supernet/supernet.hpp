#pragma once

#include <optional>
#include <string>
#include <vector>

#include "l2g/supernet/topology.hpp"

namespace l2g {

enum class HeadMode { shared, per_task };

std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& name);

enum class ChoiceKind { reuse, adapt, new_layer };

std::string to_string(ChoiceKind kind);
ChoiceKind choice_kind_from_string(const std::string& name);

/// Per-slot decision for one task. Ids, not positions, identify variants and adapters.
struct LayerChoice {
  ChoiceKind kind = ChoiceKind::new_layer;
  int variant_id = -1;
  int adapter_id = -1;  ///< set for adapt once committed

  friend bool operator==(const LayerChoice&, const LayerChoice&) = default;
};

struct TaskStructure {
  int task = -1;
  std::vector<LayerChoice> choices;

  friend bool operator==(const TaskStructure&, const TaskStructure&) = default;
};

/// Short human form, e.g. "N R(0) A(3)".
std::string describe(const TaskStructure& structure);

struct LayerVariant {
  int id = -1;
  int origin_task = -1;
  LayerParams params;
  std::vector<int> reuse_tasks;  ///< tasks that committed a Reuse of this variant
};

struct Adapter {
  int id = -1;
  std::size_t slot = 0;
  int owner_task = -1;
  int variant_id = -1;
  AdapterParams params;
};

struct TaskHead {
  int owner_task = -1;  ///< -1 for the shared head
  LayerParams params;
};

struct LayerSlot {
  std::size_t index = 0;
  LayerSpec spec;
  std::vector<LayerVariant> variants;

  /// 2 |variants| + 1.
  std::size_t choice_count() const { return 2 * variants.size() + 1; }
  const LayerVariant& variant(int id) const;
  LayerVariant& variant(int id);
};

/// What retraining hands to commit() for one slot.
struct SlotCommit {
  ChoiceKind kind = ChoiceKind::new_layer;
  int variant_id = -1;                   ///< reuse/adapt target
  std::optional<LayerParams> layer;      ///< new: fresh weights; reuse: tuned weights if any
  std::optional<AdapterParams> adapter;  ///< adapt only
};

struct CommitRequest {
  int task = -1;
  std::vector<SlotCommit> slots;
  LayerParams head;
};

struct GrowthReport {
  int task = -1;
  std::vector<std::size_t> slot_params;
  std::size_t head_params = 0;
  std::size_t total() const;
};

/// Growing store of layer variants, adapters, heads and committed task structures.
class SuperNet {
 public:
  SuperNet(Topology topology, HeadMode head_mode);

  const Topology& topology() const { return topology_; }
  HeadMode head_mode() const { return head_mode_; }
  std::size_t num_slots() const { return slots_.size(); }
  const LayerSlot& slot(std::size_t l) const;
  std::size_t choice_count(std::size_t l) const { return slot(l).choice_count(); }
  /// Product of choice counts over all slots.
  std::size_t search_space_size() const;

  std::size_t num_tasks() const { return structures_.size(); }
  bool has_task(int task) const;
  const TaskStructure& structure(int task) const;
  const std::vector<TaskStructure>& structures() const { return structures_; }
  const Adapter& adapter(int id) const;
  const std::vector<Adapter>& adapters() const { return adapters_; }
  const std::vector<TaskHead>& heads() const { return heads_; }
  /// The head used by `task`; throws if none.
  const TaskHead& head_for(int task) const;
  /// The shared head if one exists, for warm-starting later tasks.
  const TaskHead* shared_head() const;

  /// Logits for a committed task using its recorded structure.
  Var forward_task(Tape& tape, Var x, int task) const;
  Tensor logits(const Tensor& x, int task) const;

  /// Appends variants/adapters/head per the request; values are stored at
  /// 32-bit precision. Throws on double commit or out-of-order tasks.
  GrowthReport commit(const CommitRequest& request);

  std::size_t total_params() const { return total_params_; }
  /// Recount from the stored tensors; must equal total_params().
  std::size_t recount_params() const;

  /// Euclidean distance between the layer-l weights used by two committed
  /// tasks (adapter parameters are excluded).
  double param_distance(int task_i, int task_j, std::size_t layer) const;

 private:
  friend class CheckpointAccess;

  const LayerParams& layer_params_for(int task, std::size_t layer) const;

  Topology topology_;
  HeadMode head_mode_;
  std::vector<LayerSlot> slots_;
  std::vector<Adapter> adapters_;
  std::vector<TaskHead> heads_;
  std::vector<TaskStructure> structures_;
  int next_variant_id_ = 0;
  int next_adapter_id_ = 0;
  std::size_t total_params_ = 0;
};

}  // namespace l2g
