#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "l2g/search/dataset.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g {

struct SearchConfig {
  std::size_t epochs = 15;
  std::size_t warmup_epochs = 0;  ///< weight-only epochs before alpha starts moving
  std::size_t batch = 128;
  double lr_w = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_alpha = 3e-3;
  double beta = 0.1;
  double val_fraction = 0.5;
  bool allow_adapt = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Architecture logits per slot. Candidates are ordered
/// [Reuse(v1..vk), Adapt(v1..vk), New]; Adapt entries are absent when disabled
/// or unsupported at that slot.
struct ArchWeights {
  std::vector<Tensor> alpha;
  std::vector<std::vector<LayerChoice>> candidates;
  /// Parameter cost of each candidate divided by the base network size.
  std::vector<std::vector<double>> cost;

  std::size_t num_slots() const { return alpha.size(); }
  void validate() const;
};

/// Additional parameters a choice adds at one slot.
std::size_t param_cost(const LayerSpec& spec, ChoiceKind kind);

/// Candidate list and zeroed logits for every slot of `net`.
ArchWeights make_arch_weights(const SuperNet& net, bool allow_adapt);

/// Sum over slots of softmax(alpha) . cost.
Var structure_penalty(std::span<const Var> alpha, const ArchWeights& arch);
double structure_penalty_value(const ArchWeights& arch);

/// Per-slot argmax; ties go to the lower candidate index.
TaskStructure derive_structure(const ArchWeights& arch, int task);

/// Called with the slot index, the mixed pre-activation and the branch pre-activations.
using PreactHook = std::function<void(std::size_t slot, const Tensor& mixed, const std::vector<Var>& branches)>;

/// Supernet relaxation for one new task: existing variants are read-only,
/// fresh adapters (one per variant) and one fresh New branch per slot are
/// trainable, and the head is a trainable copy.
class MixedModel {
 public:
  MixedModel(const SuperNet& net, int task, ArchWeights arch, Rng& rng);

  const SuperNet& net() const { return *net_; }
  ArchWeights& arch() { return arch_; }
  const ArchWeights& arch() const { return arch_; }
  AdapterParams& adapter(std::size_t slot, int variant_id);
  LayerParams& fresh(std::size_t slot) { return slots_.at(slot).fresh; }
  LayerParams& head() { return head_; }

  /// Records the relaxed forward pass. Branch weights and alpha enter the tape
  /// as trainable parameters only when the matching flag is set.
  Var forward(Tape& tape, Var x, bool train_weights, bool train_alpha, const PreactHook& hook = nullptr);
  Tensor logits(const Tensor& x);

  std::vector<Tensor*> weight_params();
  std::vector<Tensor*> alpha_params();

 private:
  struct Slot {
    std::vector<int> variant_ids;
    std::vector<AdapterParams> adapters;  ///< parallel to variant_ids; empty if none
    LayerParams fresh;
  };
  Var param(Tape& tape, Tensor& t, bool trainable) const;

  const SuperNet* net_;
  ArchWeights arch_;
  std::vector<Slot> slots_;
  LayerParams head_;
};

struct SearchEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double penalty = 0.0;
  std::vector<std::vector<double>> alpha;

  std::string to_json() const;
};

struct SearchResult {
  ArchWeights arch;
  TaskStructure structure;
  std::vector<SearchEpoch> trace;
};

/// Alternating first-order search for `task` (which must be >= 1). The
/// training data is split into weight and alpha halves by split_train_val.
/// Throws DivergenceError on a non-finite loss.
SearchResult search(const SuperNet& net, int task, const ExampleSet& data, const SearchConfig& config,
                    std::ostream* trace_out = nullptr);

}  // namespace l2g
