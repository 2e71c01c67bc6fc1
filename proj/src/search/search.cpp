#include "l2g/search/search.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "l2g/tensor/optim.hpp"

namespace l2g {
namespace {

LayerParams copy_params(const LayerParams& p) { return {p.weight, p.bias}; }

std::vector<double> softmax_values(const Tensor& a) {
  double hi = a[0];
  for (double v : a.data()) hi = std::max(hi, v);
  std::vector<double> p(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += p[i] = std::exp(a[i] - hi);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void SearchConfig::validate() const {
  if (epochs == 0) throw ContractError("search.epochs must be >= 1");
  if (warmup_epochs >= epochs) throw ContractError("search.warmup_epochs must be < search.epochs");
  if (batch == 0) throw ContractError("search.batch must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ContractError("search.val_fraction must be in (0,1)");
  if (!(beta >= 0.0)) throw ContractError("search.beta must be >= 0");
  if (!(lr_w > 0.0) || !(lr_alpha > 0.0)) throw ContractError("search learning rates must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("search.momentum must be in [0,1)");
}

void ArchWeights::validate() const {
  if (candidates.size() != alpha.size() || cost.size() != alpha.size()) {
    throw ContractError("arch weights: slot counts disagree");
  }
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    if (alpha[l].rank() != 1 || alpha[l].size() != candidates[l].size() || cost[l].size() != candidates[l].size()) {
      throw ContractError("arch weights: slot " + std::to_string(l) + " has mismatched lengths");
    }
    if (!alpha[l].all_finite()) throw NumericError("arch weights: slot " + std::to_string(l) + " is not finite");
  }
}

std::size_t param_cost(const LayerSpec& spec, ChoiceKind kind) {
  switch (kind) {
    case ChoiceKind::reuse:
      return 0;
    case ChoiceKind::adapt:
      return spec.adapter_size();
    case ChoiceKind::new_layer:
      return spec.base_size();
  }
  return 0;
}

ArchWeights make_arch_weights(const SuperNet& net, bool allow_adapt) {
  ArchWeights arch;
  const double base = static_cast<double>(net.topology().base_network_size());
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    const LayerSlot& slot = net.slot(l);
    std::vector<LayerChoice> cands;
    for (const auto& v : slot.variants) cands.push_back({ChoiceKind::reuse, v.id, -1});
    if (allow_adapt && slot.spec.adapter_supported()) {
      for (const auto& v : slot.variants) cands.push_back({ChoiceKind::adapt, v.id, -1});
    }
    cands.push_back({ChoiceKind::new_layer, -1, -1});
    std::vector<double> cost;
    for (const auto& c : cands) cost.push_back(static_cast<double>(param_cost(slot.spec, c.kind)) / base);
    arch.alpha.emplace_back(Shape{cands.size()});
    arch.candidates.push_back(std::move(cands));
    arch.cost.push_back(std::move(cost));
  }
  return arch;
}

Var structure_penalty(std::span<const Var> alpha, const ArchWeights& arch) {
  if (alpha.size() != arch.num_slots() || alpha.empty()) {
    throw ContractError("structure_penalty: " + std::to_string(alpha.size()) + " alpha vectors for " +
                        std::to_string(arch.num_slots()) + " slots");
  }
  Var total = dot(softmax(alpha[0]), arch.cost[0]);
  for (std::size_t l = 1; l < alpha.size(); ++l) total = add(total, dot(softmax(alpha[l]), arch.cost[l]));
  return total;
}

double structure_penalty_value(const ArchWeights& arch) {
  double total = 0.0;
  for (std::size_t l = 0; l < arch.num_slots(); ++l) {
    const auto p = softmax_values(arch.alpha[l]);
    for (std::size_t c = 0; c < p.size(); ++c) total += p[c] * arch.cost[l][c];
  }
  return total;
}

TaskStructure derive_structure(const ArchWeights& arch, int task) {
  arch.validate();
  TaskStructure s;
  s.task = task;
  for (std::size_t l = 0; l < arch.num_slots(); ++l) {
    const Tensor& a = arch.alpha[l];
    std::size_t best = 0;
    for (std::size_t c = 1; c < a.size(); ++c) {
      if (a[c] > a[best]) best = c;
    }
    s.choices.push_back(arch.candidates[l][best]);
  }
  return s;
}

MixedModel::MixedModel(const SuperNet& net, int task, ArchWeights arch, Rng& rng)
    : net_(&net), arch_(std::move(arch)) {
  if (task < 1 || net.num_tasks() != static_cast<std::size_t>(task)) {
    throw ContractError("mixed model for task " + std::to_string(task) + " needs exactly " + std::to_string(task) +
                        " committed tasks, found " + std::to_string(net.num_tasks()));
  }
  arch_.validate();
  if (arch_.num_slots() != net.num_slots()) throw ContractError("arch weights do not match the supernet slots");
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    const LayerSlot& s = net.slot(l);
    Slot slot;
    bool any_adapt = false;
    for (const auto& c : arch_.candidates[l]) any_adapt |= c.kind == ChoiceKind::adapt;
    for (const auto& v : s.variants) {
      slot.variant_ids.push_back(v.id);
      if (any_adapt) {
        slot.adapters.push_back(init_adapter(s.spec, rng));
        slot.adapters.back().set_requires_grad(true);
      }
    }
    slot.fresh = init_layer(s.spec, rng);
    slot.fresh.set_requires_grad(true);
    slots_.push_back(std::move(slot));
  }
  const TaskHead* shared = net.shared_head();
  head_ = shared ? copy_params(shared->params) : init_head(net.topology(), rng);
  head_.set_requires_grad(true);
  for (auto& a : arch_.alpha) a.set_requires_grad(true);
}

AdapterParams& MixedModel::adapter(std::size_t slot, int variant_id) {
  Slot& s = slots_.at(slot);
  for (std::size_t i = 0; i < s.adapters.size(); ++i) {
    if (s.variant_ids[i] == variant_id) return s.adapters[i];
  }
  throw ContractError("slot " + std::to_string(slot) + " has no adapter for variant " + std::to_string(variant_id));
}

Var MixedModel::param(Tape& tape, Tensor& t, bool trainable) const {
  return trainable ? tape.param(t) : tape.input(t);
}

Var MixedModel::forward(Tape& tape, Var x, bool train_weights, bool train_alpha, const PreactHook& hook) {
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    try {
      const LayerSlot& ls = net_->slot(l);
      Slot& slot = slots_[l];
      std::vector<Var> reused;
      for (int id : slot.variant_ids) {
        const LayerVariant& v = ls.variant(id);
        reused.push_back(layer_preact(ls.spec, x, tape.input(v.params.weight), tape.input(v.params.bias)));
      }
      std::vector<Var> branches;
      for (const auto& c : arch_.candidates[l]) {
        std::size_t k = 0;
        if (c.kind != ChoiceKind::new_layer) {
          while (slot.variant_ids[k] != c.variant_id) ++k;
        }
        switch (c.kind) {
          case ChoiceKind::reuse:
            branches.push_back(reused[k]);
            break;
          case ChoiceKind::adapt: {
            AdapterParams& a = slot.adapters[k];
            std::optional<Var> second;
            if (!a.second.empty()) second = param(tape, a.second, train_weights);
            branches.push_back(add(reused[k], adapter_preact(ls.spec, x, param(tape, a.first, train_weights), second)));
            break;
          }
          case ChoiceKind::new_layer:
            branches.push_back(layer_preact(ls.spec, x, param(tape, slot.fresh.weight, train_weights),
                                            param(tape, slot.fresh.bias, train_weights)));
            break;
        }
      }
      Var mixed = mix(softmax(param(tape, arch_.alpha[l], train_alpha)), branches);
      if (hook) hook(l, mixed.value(), branches);
      x = layer_activation(ls.spec, mixed);
    } catch (const NumericError& e) {
      throw NumericError("slot " + std::to_string(l) + ": " + e.what());
    }
  }
  return head_logits(x, param(tape, head_.weight, train_weights), param(tape, head_.bias, train_weights));
}

Tensor MixedModel::logits(const Tensor& x) {
  Tape tape;
  return forward(tape, tape.input(x), false, false).value();
}

std::vector<Tensor*> MixedModel::weight_params() {
  std::vector<Tensor*> out;
  for (auto& s : slots_) {
    for (auto& a : s.adapters) {
      out.push_back(&a.first);
      if (!a.second.empty()) out.push_back(&a.second);
    }
    out.push_back(&s.fresh.weight);
    out.push_back(&s.fresh.bias);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

std::vector<Tensor*> MixedModel::alpha_params() {
  std::vector<Tensor*> out;
  for (auto& a : arch_.alpha) out.push_back(&a);
  return out;
}

std::string SearchEpoch::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["L_train"] = train_loss;
  j["L_val"] = val_loss;
  j["penalty"] = penalty;
  j["alpha"] = alpha;
  return j.dump();
}

SearchResult search(const SuperNet& net, int task, const ExampleSet& data, const SearchConfig& config,
                    std::ostream* trace_out) {
  config.validate();
  if (task < 1) throw ContractError("search runs for tasks >= 1; task 0 is trained directly");
  data.validate();
  auto [train, val] = split_train_val(data, config.val_fraction, config.seed ^ (0x9e37ull * static_cast<unsigned>(task)));

  Rng rng(config.seed, 0x5ea2c400ull + static_cast<std::uint64_t>(task));
  Rng init_rng = rng.derive(1);
  MixedModel model(net, task, make_arch_weights(net, config.allow_adapt), init_rng);

  Sgd weights_opt({config.lr_w, config.momentum, config.weight_decay});
  const auto weights = model.weight_params();
  weights_opt.add_group(weights);
  Adam alpha_opt({config.lr_alpha});
  const auto alphas = model.alpha_params();
  alpha_opt.add(alphas);

  std::vector<std::size_t> train_order(train.size()), val_order(val.size());
  for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;
  for (std::size_t i = 0; i < val_order.size(); ++i) val_order[i] = i;

  SearchResult result;
  std::vector<std::string> lines;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool update_alpha = epoch >= config.warmup_epochs;
    rng.shuffle(std::span<std::size_t>(train_order));
    rng.shuffle(std::span<std::size_t>(val_order));
    const auto train_batches = batches_of(train_order, config.batch);
    const auto val_batches = batches_of(val_order, config.batch);
    double train_loss = 0.0, val_loss = 0.0;
    try {
      for (std::size_t i = 0; i < train_batches.size(); ++i) {
        {
          Batch b = gather(val, val_batches[i % val_batches.size()]);
          Tape tape;
          Var ce = softmax_cross_entropy(model.forward(tape, tape.input(b.inputs), false, update_alpha), b.labels);
          val_loss += ce.value()[0];
          if (update_alpha) {
            std::vector<Var> av;
            for (Tensor* a : alphas) av.push_back(tape.param(*a));
            Var loss = add(ce, scale(structure_penalty(av, model.arch()), config.beta));
            tape.backward(loss);
            alpha_opt.step();
            alpha_opt.zero_grad();
          }
        }
        {
          Batch b = gather(train, train_batches[i]);
          Tape tape;
          Var ce = softmax_cross_entropy(model.forward(tape, tape.input(b.inputs), true, false), b.labels);
          train_loss += ce.value()[0];
          tape.backward(ce);
          weights_opt.step();
          weights_opt.zero_grad();
        }
      }
    } catch (const NumericError& e) {
      throw DivergenceError("search task " + std::to_string(task) + " epoch " + std::to_string(epoch) + ": " + e.what(),
                            lines);
    }
    SearchEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss / static_cast<double>(train_batches.size());
    rec.val_loss = val_loss / static_cast<double>(train_batches.size());
    rec.penalty = structure_penalty_value(model.arch());
    for (const auto& a : model.arch().alpha) rec.alpha.emplace_back(a.data().begin(), a.data().end());
    lines.push_back(rec.to_json());
    if (trace_out) *trace_out << lines.back() << '\n';
    result.trace.push_back(std::move(rec));
  }
  result.arch = model.arch();
  for (auto& a : result.arch.alpha) a.set_requires_grad(false);
  result.structure = derive_structure(result.arch, task);
  return result;
}

}  // namespace l2g
