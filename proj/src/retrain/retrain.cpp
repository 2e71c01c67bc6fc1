#include "l2g/retrain/retrain.hpp"

#include <cmath>

#include "json.hpp"
#include "l2g/tensor/optim.hpp"

namespace l2g {
namespace {

struct SlotState {
  LayerChoice choice;
  const LayerParams* frozen = nullptr;  ///< fixed reuse or the adapted variant
  LayerParams trained;                  ///< new layer or tuned copy of a reused one
  AdapterParams adapter;
  LayerParams anchor;                   ///< pre-retrain values of a tuned reuse
  bool tuned = false;
};

Var slot_preact(const LayerSpec& spec, Tape& tape, Var x, SlotState& s) {
  switch (s.choice.kind) {
    case ChoiceKind::new_layer:
      return layer_preact(spec, x, tape.param(s.trained.weight), tape.param(s.trained.bias));
    case ChoiceKind::reuse:
      if (s.tuned) return layer_preact(spec, x, tape.param(s.trained.weight), tape.param(s.trained.bias));
      return layer_preact(spec, x, tape.input(s.frozen->weight), tape.input(s.frozen->bias));
    case ChoiceKind::adapt: {
      Var pre = layer_preact(spec, x, tape.input(s.frozen->weight), tape.input(s.frozen->bias));
      std::optional<Var> second;
      if (!s.adapter.second.empty()) second = tape.param(s.adapter.second);
      return add(pre, adapter_preact(spec, x, tape.param(s.adapter.first), second));
    }
  }
  throw ContractError("unknown choice kind");
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::fix_reuse:
      return "fix";
    case StrategyKind::tune:
      return "tune";
    case StrategyKind::tune_l2:
      return "tune_l2";
    case StrategyKind::tune_ewc:
      return "tune_ewc";
  }
  return "?";
}

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "fix") return StrategyKind::fix_reuse;
  if (name == "tune") return StrategyKind::tune;
  if (name == "tune_l2") return StrategyKind::tune_l2;
  if (name == "tune_ewc") return StrategyKind::tune_ewc;
  throw ContractError("unknown retrain strategy '" + name + "' (expected fix, tune, tune_l2 or tune_ewc)");
}

void RetrainStrategy::validate() const {
  if (!(lr_scale > 0.0 && lr_scale <= 1.0)) throw ContractError("strategy.lr_scale must be in (0,1]");
  if (!(lambda_reg >= 0.0)) throw ContractError("strategy.lambda_reg must be >= 0");
  if (!(lambda_ewc >= 0.0)) throw ContractError("strategy.lambda_ewc must be >= 0");
  if (fisher_samples == 0) throw ContractError("strategy.fisher_samples must be >= 1");
}

void RetrainConfig::validate() const {
  if (epochs == 0) throw ContractError("retrain.epochs must be >= 1");
  if (batch == 0) throw ContractError("retrain.batch must be >= 1");
  if (!(lr > 0.0)) throw ContractError("retrain.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("retrain.momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ContractError("retrain.weight_decay must be >= 0");
  strategy.validate();
}

FisherState estimate_fisher(const ModelForward& forward, std::span<const NamedParam> params, const ExampleSet& data,
                            std::size_t n_samples, std::uint64_t seed, int task) {
  if (n_samples == 0) throw ContractError("estimate_fisher: n_samples must be >= 1");
  if (data.size() == 0) throw ContractError("estimate_fisher: empty dataset");
  std::vector<bool> had_grad;
  FisherState state;
  state.task = task;
  for (const auto& p : params) {
    had_grad.push_back(p.tensor->requires_grad());
    p.tensor->set_requires_grad(true);
    state.entries.push_back({p.key, Tensor(p.tensor->shape()), *p.tensor});
    state.entries.back().anchor.set_requires_grad(false);
  }
  Rng rng(seed, 0xf15e7);
  const auto perm = rng.permutation(data.size());
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t row = perm[i % perm.size()];
    Batch b = gather(data, std::span<const std::size_t>(&row, 1));
    for (const auto& p : params) p.tensor->zero_grad();
    Tape tape;
    Var logits = forward(tape, tape.input(b.inputs));
    const Tensor& lv = logits.value();
    double hi = lv[0];
    for (double v : lv.data()) hi = std::max(hi, v);
    std::vector<double> prob(lv.size());
    double total = 0.0;
    for (std::size_t c = 0; c < lv.size(); ++c) total += prob[c] = std::exp(lv[c] - hi);
    const double u = rng.uniform() * total;
    int y = static_cast<int>(lv.size()) - 1;
    double acc = 0.0;
    for (std::size_t c = 0; c < prob.size(); ++c) {
      acc += prob[c];
      if (u < acc) {
        y = static_cast<int>(c);
        break;
      }
    }
    tape.backward(softmax_cross_entropy(logits, std::span<const int>(&y, 1)));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto g = params[k].tensor->grad();
      auto f = state.entries[k].fisher.data();
      for (std::size_t j = 0; j < g.size(); ++j) f[j] += g[j] * g[j];
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (double& f : state.entries[k].fisher.data()) f /= static_cast<double>(n_samples);
    params[k].tensor->set_requires_grad(had_grad[k]);
  }
  return state;
}

Var ewc_penalty(Tape& tape, std::span<const NamedParam> params, std::span<const FisherState> states) {
  Var total;
  for (const auto& p : params) {
    std::optional<Var> theta;
    for (const auto& s : states) {
      for (const auto& e : s.entries) {
        if (e.key != p.key) continue;
        if (e.anchor.shape() != p.tensor->shape()) {
          throw ContractError("ewc_penalty: '" + p.key + "' has shape " + to_string(p.tensor->shape()) +
                              " but its anchor is " + to_string(e.anchor.shape()));
        }
        if (!theta) theta = tape.param(*p.tensor);
        Var term = weighted_sq_distance(*theta, e.anchor, &e.fisher);
        total = total.valid() ? add(total, term) : term;
      }
    }
  }
  return total;
}

Var l2_anchor_penalty(std::span<const Var> params, std::span<const Tensor* const> anchors) {
  if (params.size() != anchors.size() || params.empty()) {
    throw ContractError("l2_anchor_penalty: " + std::to_string(params.size()) + " params for " +
                        std::to_string(anchors.size()) + " anchors");
  }
  Var total = weighted_sq_distance(params[0], *anchors[0], nullptr);
  for (std::size_t i = 1; i < params.size(); ++i) total = add(total, weighted_sq_distance(params[i], *anchors[i], nullptr));
  return total;
}

std::string RetrainEpoch::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["train_acc"] = train_acc;
  j["reg_penalty"] = reg_penalty;
  return j.dump();
}

std::string variant_key(int variant_id, bool bias) {
  return "variant" + std::to_string(variant_id) + (bias ? ".bias" : ".weight");
}

RetrainResult retrain(const SuperNet& net, const TaskStructure& structure, const ExampleSet& train,
                      const RetrainConfig& config, std::span<const FisherState> fisher, const ExampleSet* test,
                      std::ostream* trace_out) {
  config.validate();
  train.validate();
  const int task = static_cast<int>(net.num_tasks());
  if (structure.choices.size() != net.num_slots()) {
    throw ContractError("retrain: structure has " + std::to_string(structure.choices.size()) + " choices for " +
                        std::to_string(net.num_slots()) + " slots");
  }
  const StrategyKind kind = config.strategy.kind;
  Rng rng(config.seed, 0x4e7a1000ull + static_cast<std::uint64_t>(task));
  Rng init_rng = rng.derive(1);

  std::vector<SlotState> slots(net.num_slots());
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    const LayerSlot& ls = net.slot(l);
    SlotState& s = slots[l];
    s.choice = structure.choices[l];
    switch (s.choice.kind) {
      case ChoiceKind::new_layer:
        s.trained = init_layer(ls.spec, init_rng);
        s.trained.set_requires_grad(true);
        break;
      case ChoiceKind::reuse: {
        const LayerParams& v = ls.variant(s.choice.variant_id).params;
        s.frozen = &v;
        if (kind != StrategyKind::fix_reuse) {
          s.tuned = true;
          s.trained = {v.weight, v.bias};
          s.trained.set_requires_grad(true);
          s.anchor = {v.weight, v.bias};
        }
        break;
      }
      case ChoiceKind::adapt:
        if (!ls.spec.adapter_supported()) throw ContractError("retrain: slot " + std::to_string(l) + " cannot adapt");
        s.frozen = &ls.variant(s.choice.variant_id).params;
        s.adapter = init_adapter(ls.spec, init_rng);
        s.adapter.set_requires_grad(true);
        break;
    }
  }
  const TaskHead* shared = net.shared_head();
  LayerParams head = shared ? LayerParams{shared->params.weight, shared->params.bias} : init_head(net.topology(), init_rng);
  head.set_requires_grad(true);

  std::vector<Tensor*> main_group{&head.weight, &head.bias}, reuse_group;
  std::vector<NamedParam> named;
  std::vector<Tensor*> anchored;
  std::vector<const Tensor*> anchors;
  for (auto& s : slots) {
    if (s.choice.kind == ChoiceKind::new_layer) {
      main_group.insert(main_group.end(), {&s.trained.weight, &s.trained.bias});
    } else if (s.choice.kind == ChoiceKind::adapt) {
      main_group.push_back(&s.adapter.first);
      if (!s.adapter.second.empty()) main_group.push_back(&s.adapter.second);
    } else if (s.tuned) {
      reuse_group.insert(reuse_group.end(), {&s.trained.weight, &s.trained.bias});
      named.push_back({variant_key(s.choice.variant_id, false), &s.trained.weight});
      named.push_back({variant_key(s.choice.variant_id, true), &s.trained.bias});
      anchored.insert(anchored.end(), {&s.trained.weight, &s.trained.bias});
      anchors.insert(anchors.end(), {&s.anchor.weight, &s.anchor.bias});
    }
  }
  Sgd opt({config.lr, config.momentum, config.weight_decay});
  opt.add_group(main_group);
  if (!reuse_group.empty()) opt.add_group(reuse_group, kind == StrategyKind::tune ? config.strategy.lr_scale : 1.0);

  auto forward = [&](Tape& tape, Var x) {
    for (std::size_t l = 0; l < slots.size(); ++l) {
      const LayerSpec& spec = net.slot(l).spec;
      x = layer_activation(spec, slot_preact(spec, tape, x, slots[l]));
    }
    return head_logits(x, tape.param(head.weight), tape.param(head.bias));
  };

  RetrainResult result;
  std::vector<std::string> lines;
  auto order = iota(train.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0, reg_sum = 0.0;
    std::size_t correct = 0, steps = 0;
    try {
      for (auto rows : batches_of(order, config.batch)) {
        Batch b = gather(train, rows);
        Tape tape;
        Var logits = forward(tape, tape.input(b.inputs));
        Var loss = softmax_cross_entropy(logits, b.labels);
        loss_sum += loss.value()[0];
        const auto pred = argmax_rows(logits.value());
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
        Var reg;
        if (kind == StrategyKind::tune_l2 && !anchored.empty()) {
          std::vector<Var> vars;
          for (Tensor* t : anchored) vars.push_back(tape.input(*t));
          reg_sum += config.strategy.lambda_reg * l2_anchor_penalty(vars, anchors).value()[0];
        } else if (kind == StrategyKind::tune_ewc && !named.empty()) {
          Var p = ewc_penalty(tape, named, fisher);
          if (p.valid()) reg = scale(p, config.strategy.lambda_ewc);
        }
        if (reg.valid()) {
          reg_sum += reg.value()[0];
          loss = add(loss, reg);
        }
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        if (kind == StrategyKind::tune_l2) {
          // Exact minimizer of the anchor term around the gradient step; stable for any lambda.
          const double c = 2.0 * config.lr * config.strategy.lambda_reg;
          for (std::size_t k = 0; k < anchored.size(); ++k) {
            auto theta = anchored[k]->data();
            const auto star = anchors[k]->data();
            for (std::size_t j = 0; j < theta.size(); ++j) theta[j] = (theta[j] + c * star[j]) / (1.0 + c);
          }
        }
        ++steps;
      }
    } catch (const NumericError& e) {
      throw DivergenceError("retrain task " + std::to_string(task) + " epoch " + std::to_string(epoch) + ": " + e.what(),
                            lines);
    }
    RetrainEpoch rec{epoch, loss_sum / static_cast<double>(steps),
                     static_cast<double>(correct) / static_cast<double>(train.size()),
                     reg_sum / static_cast<double>(steps)};
    lines.push_back(rec.to_json());
    if (trace_out) *trace_out << lines.back() << '\n';
    result.trace.push_back(rec);
  }
  result.train_loss = result.trace.back().train_loss;
  result.train_acc = result.trace.back().train_acc;
  if (test != nullptr) {
    result.test_acc = accuracy(
        [&](const Tensor& x) {
          Tape tape;
          return forward(tape, tape.input(x)).value();
        },
        *test);
  }

  result.request.task = task;
  for (auto& s : slots) {
    SlotCommit sc;
    sc.kind = s.choice.kind;
    sc.variant_id = s.choice.variant_id;
    if (s.choice.kind == ChoiceKind::new_layer || s.tuned) {
      s.trained.set_requires_grad(false);
      sc.layer = std::move(s.trained);
    }
    if (s.choice.kind == ChoiceKind::adapt) {
      s.adapter.set_requires_grad(false);
      sc.adapter = std::move(s.adapter);
    }
    result.request.slots.push_back(std::move(sc));
  }
  head.set_requires_grad(false);
  result.request.head = std::move(head);
  return result;
}

FisherState task_fisher(const SuperNet& net, int task, const ExampleSet& data, std::size_t n_samples,
                        std::uint64_t seed) {
  const TaskStructure& s = net.structure(task);
  std::vector<LayerParams> copies;
  copies.reserve(s.choices.size());
  std::vector<NamedParam> named;
  for (std::size_t l = 0; l < s.choices.size(); ++l) {
    const LayerParams& v = net.slot(l).variant(s.choices[l].variant_id).params;
    copies.push_back({v.weight, v.bias});
    named.push_back({variant_key(s.choices[l].variant_id, false), &copies.back().weight});
    named.push_back({variant_key(s.choices[l].variant_id, true), &copies.back().bias});
  }
  const TaskHead& head = net.head_for(task);
  auto forward = [&](Tape& tape, Var x) {
    for (std::size_t l = 0; l < s.choices.size(); ++l) {
      const LayerSlot& slot = net.slot(l);
      Var pre = layer_preact(slot.spec, x, tape.param(copies[l].weight), tape.param(copies[l].bias));
      if (s.choices[l].kind == ChoiceKind::adapt) {
        const Adapter& a = net.adapter(s.choices[l].adapter_id);
        std::optional<Var> second;
        if (!a.params.second.empty()) second = tape.input(a.params.second);
        pre = add(pre, adapter_preact(slot.spec, x, tape.input(a.params.first), second));
      }
      x = layer_activation(slot.spec, pre);
    }
    return head_logits(x, tape.input(head.params.weight), tape.input(head.params.bias));
  };
  return estimate_fisher(forward, named, data, n_samples, seed, task);
}

}  // namespace l2g
