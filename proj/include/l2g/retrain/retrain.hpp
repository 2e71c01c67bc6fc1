#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "l2g/search/dataset.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g {

enum class StrategyKind { fix_reuse, tune, tune_l2, tune_ewc };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

/// How reused layers are treated while retraining.
struct RetrainStrategy {
  StrategyKind kind = StrategyKind::fix_reuse;
  double lr_scale = 0.1;           ///< tune
  double lambda_reg = 1e-2;        ///< tune_l2
  double lambda_ewc = 100.0;       ///< tune_ewc
  std::size_t fisher_samples = 1024;

  void validate() const;
};

struct RetrainConfig {
  std::size_t epochs = 5;
  std::size_t batch = 128;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  RetrainStrategy strategy;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trainable tensor with a stable key so anchors can be matched across tasks.
struct NamedParam {
  std::string key;
  Tensor* tensor;
};

struct FisherEntry {
  std::string key;
  Tensor fisher;
  Tensor anchor;
};

/// Diagonal Fisher information and anchor values recorded after one task.
struct FisherState {
  int task = -1;
  std::vector<FisherEntry> entries;
};

/// Builds logits for a batch, registering parameters with tape.param().
using ModelForward = std::function<Var(Tape&, Var x)>;

/// Mean over `n_samples` single examples of the squared gradient of
/// log p(y | x), with y drawn from the model's own predictive distribution.
/// Example i of the estimate uses row perm[i mod N] of a seeded permutation.
FisherState estimate_fisher(const ModelForward& forward, std::span<const NamedParam> params, const ExampleSet& data,
                            std::size_t n_samples, std::uint64_t seed, int task = -1);

/// Sum over states and matching keys of F * (theta - anchor)^2. Parameters
/// without an entry contribute nothing. Returns an empty Var if nothing matched.
Var ewc_penalty(Tape& tape, std::span<const NamedParam> params, std::span<const FisherState> states);

/// ||theta - anchor||^2 summed over all pairs.
Var l2_anchor_penalty(std::span<const Var> params, std::span<const Tensor* const> anchors);

struct RetrainEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double reg_penalty = 0.0;

  std::string to_json() const;
};

struct RetrainResult {
  CommitRequest request;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = -1.0;  ///< set when a test set was given
  std::vector<RetrainEpoch> trace;
};

/// Key under which a variant's tensors appear in Fisher states.
std::string variant_key(int variant_id, bool bias);

/// Trains `structure` for the next task of `net`. New layers and adapters start
/// fresh; reused layers follow the strategy; the head is a copy of the shared
/// head or a fresh per-task head. `fisher` supplies earlier-task anchors for
/// tune_ewc. Throws DivergenceError on a non-finite loss.
RetrainResult retrain(const SuperNet& net, const TaskStructure& structure, const ExampleSet& train,
                      const RetrainConfig& config, std::span<const FisherState> fisher = {},
                      const ExampleSet* test = nullptr, std::ostream* trace_out = nullptr);

/// Fisher state of a committed task over the variants it uses.
FisherState task_fisher(const SuperNet& net, int task, const ExampleSet& data, std::size_t n_samples,
                        std::uint64_t seed);

}  // namespace l2g
