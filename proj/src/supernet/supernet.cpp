#include "l2g/supernet/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace l2g {
namespace {

std::size_t layer_count(const LayerParams& p) { return p.count(); }

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected) {
    throw ContractError(what + ": expected shape " + to_string(expected) + ", got " + to_string(t.shape()));
  }
}

LayerParams stored(const LayerParams& p) {
  LayerParams out{Tensor(p.weight.shape(), std::vector<double>(p.weight.data().begin(), p.weight.data().end())),
                  Tensor(p.bias.shape(), std::vector<double>(p.bias.data().begin(), p.bias.data().end()))};
  round_to_f32(out.weight);
  round_to_f32(out.bias);
  return out;
}

AdapterParams stored(const AdapterParams& p) {
  AdapterParams out;
  out.first = Tensor(p.first.shape(), std::vector<double>(p.first.data().begin(), p.first.data().end()));
  round_to_f32(out.first);
  if (!p.second.empty()) {
    out.second = Tensor(p.second.shape(), std::vector<double>(p.second.data().begin(), p.second.data().end()));
    round_to_f32(out.second);
  }
  return out;
}

}  // namespace

std::string to_string(HeadMode mode) { return mode == HeadMode::shared ? "shared" : "per_task"; }

HeadMode head_mode_from_string(const std::string& name) {
  if (name == "shared") return HeadMode::shared;
  if (name == "per_task") return HeadMode::per_task;
  throw ContractError("unknown head mode '" + name + "'");
}

std::string to_string(ChoiceKind kind) {
  switch (kind) {
    case ChoiceKind::reuse:
      return "reuse";
    case ChoiceKind::adapt:
      return "adapt";
    case ChoiceKind::new_layer:
      return "new";
  }
  return "?";
}

ChoiceKind choice_kind_from_string(const std::string& name) {
  if (name == "reuse") return ChoiceKind::reuse;
  if (name == "adapt") return ChoiceKind::adapt;
  if (name == "new") return ChoiceKind::new_layer;
  throw ContractError("unknown choice kind '" + name + "'");
}

std::string describe(const TaskStructure& structure) {
  std::ostringstream os;
  for (std::size_t l = 0; l < structure.choices.size(); ++l) {
    if (l != 0) os << ' ';
    const LayerChoice& c = structure.choices[l];
    switch (c.kind) {
      case ChoiceKind::reuse:
        os << "R(" << c.variant_id << ')';
        break;
      case ChoiceKind::adapt:
        os << "A(" << c.variant_id << ')';
        break;
      case ChoiceKind::new_layer:
        os << 'N';
        break;
    }
  }
  return os.str();
}

const LayerVariant& LayerSlot::variant(int id) const {
  for (const auto& v : variants) {
    if (v.id == id) return v;
  }
  throw ContractError("slot " + std::to_string(index) + " has no variant " + std::to_string(id));
}

LayerVariant& LayerSlot::variant(int id) {
  return const_cast<LayerVariant&>(static_cast<const LayerSlot&>(*this).variant(id));
}

std::size_t GrowthReport::total() const {
  std::size_t t = head_params;
  for (auto p : slot_params) t += p;
  return t;
}

SuperNet::SuperNet(Topology topology, HeadMode head_mode) : topology_(std::move(topology)), head_mode_(head_mode) {
  if (!topology_.resolved()) topology_.resolve();
  for (std::size_t l = 0; l < topology_.layers.size(); ++l) {
    LayerSlot s;
    s.index = l;
    s.spec = topology_.layers[l];
    slots_.push_back(std::move(s));
  }
}

const LayerSlot& SuperNet::slot(std::size_t l) const {
  if (l >= slots_.size()) throw ContractError("slot " + std::to_string(l) + " out of range");
  return slots_[l];
}

std::size_t SuperNet::search_space_size() const {
  std::size_t total = 1;
  for (const auto& s : slots_) total *= s.choice_count();
  return total;
}

bool SuperNet::has_task(int task) const {
  return task >= 0 && static_cast<std::size_t>(task) < structures_.size();
}

const TaskStructure& SuperNet::structure(int task) const {
  if (!has_task(task)) throw ContractError("task " + std::to_string(task) + " has no committed structure");
  return structures_[static_cast<std::size_t>(task)];
}

const Adapter& SuperNet::adapter(int id) const {
  for (const auto& a : adapters_) {
    if (a.id == id) return a;
  }
  throw ContractError("no adapter with id " + std::to_string(id));
}

const TaskHead& SuperNet::head_for(int task) const {
  const int owner = head_mode_ == HeadMode::shared ? -1 : task;
  for (const auto& h : heads_) {
    if (h.owner_task == owner) return h;
  }
  throw ContractError("task " + std::to_string(task) + " has no head");
}

const TaskHead* SuperNet::shared_head() const {
  if (head_mode_ != HeadMode::shared) return nullptr;
  for (const auto& h : heads_) {
    if (h.owner_task == -1) return &h;
  }
  return nullptr;
}

Var SuperNet::forward_task(Tape& tape, Var x, int task) const {
  const TaskStructure& s = structure(task);
  const TaskHead& head = head_for(task);
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    const LayerSlot& slot = slots_[l];
    const LayerChoice& c = s.choices[l];
    const LayerVariant& v = slot.variant(c.variant_id);
    Var pre = layer_preact(slot.spec, x, tape.input(v.params.weight), tape.input(v.params.bias));
    if (c.kind == ChoiceKind::adapt) {
      const Adapter& a = adapter(c.adapter_id);
      std::optional<Var> second;
      if (!a.params.second.empty()) second = tape.input(a.params.second);
      pre = add(pre, adapter_preact(slot.spec, x, tape.input(a.params.first), second));
    }
    x = layer_activation(slot.spec, pre);
  }
  return head_logits(x, tape.input(head.params.weight), tape.input(head.params.bias));
}

Tensor SuperNet::logits(const Tensor& x, int task) const {
  Tape tape;
  return forward_task(tape, tape.input(x), task).value();
}

GrowthReport SuperNet::commit(const CommitRequest& request) {
  const int task = request.task;
  if (has_task(task)) throw ContractError("task " + std::to_string(task) + " is already committed");
  if (task != static_cast<int>(structures_.size())) {
    throw ContractError("tasks must be committed in order; expected " + std::to_string(structures_.size()) + ", got " +
                        std::to_string(task));
  }
  if (request.slots.size() != slots_.size()) {
    throw ContractError("commit: " + std::to_string(request.slots.size()) + " slot entries for " +
                        std::to_string(slots_.size()) + " slots");
  }
  require_shape(request.head.weight, {topology_.head_inputs(), topology_.num_classes}, "commit head weight");
  require_shape(request.head.bias, {topology_.num_classes}, "commit head bias");

  // Validate everything before mutating.
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    const SlotCommit& sc = request.slots[l];
    const LayerSlot& slot = slots_[l];
    const std::string where = "commit slot " + std::to_string(l);
    if (task == 0 && sc.kind != ChoiceKind::new_layer) throw ContractError(where + ": task 0 must be all New");
    switch (sc.kind) {
      case ChoiceKind::new_layer:
        if (!sc.layer) throw ContractError(where + ": New needs weights");
        require_shape(sc.layer->weight, slot.spec.weight_shape(), where);
        require_shape(sc.layer->bias, slot.spec.bias_shape(), where);
        break;
      case ChoiceKind::reuse:
        slot.variant(sc.variant_id);
        if (sc.layer) {
          require_shape(sc.layer->weight, slot.spec.weight_shape(), where);
          require_shape(sc.layer->bias, slot.spec.bias_shape(), where);
        }
        break;
      case ChoiceKind::adapt:
        slot.variant(sc.variant_id);
        if (!sc.adapter) throw ContractError(where + ": Adapt needs adapter weights");
        if (sc.adapter->count() != slot.spec.adapter_size()) {
          throw ContractError(where + ": adapter has " + std::to_string(sc.adapter->count()) + " params, expected " +
                              std::to_string(slot.spec.adapter_size()));
        }
        break;
    }
  }

  GrowthReport report;
  report.task = task;
  TaskStructure structure;
  structure.task = task;
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    const SlotCommit& sc = request.slots[l];
    LayerSlot& slot = slots_[l];
    LayerChoice choice;
    choice.kind = sc.kind;
    std::size_t added = 0;
    switch (sc.kind) {
      case ChoiceKind::new_layer: {
        LayerVariant v;
        v.id = next_variant_id_++;
        v.origin_task = task;
        v.params = stored(*sc.layer);
        added = layer_count(v.params);
        choice.variant_id = v.id;
        slot.variants.push_back(std::move(v));
        break;
      }
      case ChoiceKind::reuse: {
        LayerVariant& v = slot.variant(sc.variant_id);
        if (sc.layer) v.params = stored(*sc.layer);
        v.reuse_tasks.push_back(task);
        choice.variant_id = v.id;
        break;
      }
      case ChoiceKind::adapt: {
        Adapter a;
        a.id = next_adapter_id_++;
        a.slot = l;
        a.owner_task = task;
        a.variant_id = sc.variant_id;
        a.params = stored(*sc.adapter);
        added = a.params.count();
        choice.variant_id = sc.variant_id;
        choice.adapter_id = a.id;
        adapters_.push_back(std::move(a));
        break;
      }
    }
    report.slot_params.push_back(added);
    structure.choices.push_back(choice);
  }

  if (head_mode_ == HeadMode::shared && !heads_.empty()) {
    heads_.front().params = stored(request.head);
  } else {
    heads_.push_back({head_mode_ == HeadMode::shared ? -1 : task, stored(request.head)});
    report.head_params = heads_.back().params.count();
  }
  structures_.push_back(std::move(structure));
  total_params_ += report.total();
  return report;
}

std::size_t SuperNet::recount_params() const {
  std::size_t total = 0;
  for (const auto& s : slots_) {
    for (const auto& v : s.variants) total += v.params.count();
  }
  for (const auto& a : adapters_) total += a.params.count();
  for (const auto& h : heads_) total += h.params.count();
  return total;
}

const LayerParams& SuperNet::layer_params_for(int task, std::size_t layer) const {
  const LayerChoice& c = structure(task).choices.at(layer);
  return slot(layer).variant(c.variant_id).params;
}

double SuperNet::param_distance(int task_i, int task_j, std::size_t layer) const {
  if (layer >= slots_.size()) throw ContractError("param_distance: slot " + std::to_string(layer) + " out of range");
  const LayerChoice& ci = structure(task_i).choices[layer];
  const LayerChoice& cj = structure(task_j).choices[layer];
  if (ci.variant_id == cj.variant_id) return 0.0;
  const LayerParams& a = layer_params_for(task_i, layer);
  const LayerParams& b = layer_params_for(task_j, layer);
  const double w = l2_distance(a.weight, b.weight);
  const double bias = l2_distance(a.bias, b.bias);
  return std::sqrt(w * w + bias * bias);
}

}  // namespace l2g
