#include "l2g/benchmarks/baselines.hpp"

#include "l2g/retrain/retrain.hpp"
#include "l2g/tensor/optim.hpp"

namespace l2g {
namespace {

struct Model {
  Topology topo;
  std::vector<LayerParams> layers;
  LayerParams head;

  Model(Topology t, Rng& rng) : topo(std::move(t)) {
    for (const auto& spec : topo.layers) layers.push_back(init_layer(spec, rng));
    head = init_head(topo, rng);
    for (auto& l : layers) l.set_requires_grad(true);
    head.set_requires_grad(true);
  }

  Var forward(Tape& tape, Var x) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerSpec& spec = topo.layers[l];
      x = layer_activation(spec, layer_preact(spec, x, tape.param(layers[l].weight), tape.param(layers[l].bias)));
    }
    return head_logits(x, tape.param(head.weight), tape.param(head.bias));
  }

  std::vector<NamedParam> named() {
    std::vector<NamedParam> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.push_back({"layer" + std::to_string(l) + ".weight", &layers[l].weight});
      out.push_back({"layer" + std::to_string(l) + ".bias", &layers[l].bias});
    }
    out.push_back({"head.weight", &head.weight});
    out.push_back({"head.bias", &head.bias});
    return out;
  }

  Tensor logits(const Tensor& x) {
    Tape tape;
    return forward(tape, tape.input(x)).value();
  }
};

void train_task(Model& m, const ExampleSet& data, const BaselineConfig& c, BaselineKind kind,
                const std::vector<FisherState>& fisher, const std::vector<Tensor>& anchors, Rng& rng) {
  auto named = m.named();
  std::vector<Tensor*> params;
  for (auto& p : named) params.push_back(p.tensor);
  Sgd opt({c.lr, c.momentum, c.weight_decay});
  opt.add_group(params);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (auto rows : batches_of(order, c.batch)) {
      Batch b = gather(data, rows);
      Tape tape;
      Var loss = softmax_cross_entropy(m.forward(tape, tape.input(b.inputs)), b.labels);
      if (kind == BaselineKind::ewc && !fisher.empty()) {
        loss = add(loss, scale(ewc_penalty(tape, named, fisher), c.lambda_ewc));
      } else if (kind == BaselineKind::l2 && !anchors.empty()) {
        std::vector<Var> vars;
        std::vector<const Tensor*> anchor_ptrs;
        for (std::size_t i = 0; i < params.size(); ++i) {
          vars.push_back(tape.param(*params[i]));
          anchor_ptrs.push_back(&anchors[i]);
        }
        loss = add(loss, scale(l2_anchor_penalty(vars, anchor_ptrs), c.lambda_l2));
      }
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
    }
  }
}

}  // namespace

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::sgd:
      return "sgd";
    case BaselineKind::ewc:
      return "ewc";
    case BaselineKind::l2:
      return "l2";
    case BaselineKind::individual:
      return "individual";
  }
  return "?";
}

BaselineKind baseline_from_string(const std::string& name) {
  if (name == "sgd") return BaselineKind::sgd;
  if (name == "ewc") return BaselineKind::ewc;
  if (name == "l2") return BaselineKind::l2;
  if (name == "individual") return BaselineKind::individual;
  throw ContractError("unknown baseline '" + name + "' (expected sgd, ewc, l2 or individual)");
}

void BaselineConfig::validate() const {
  if (epochs == 0 || batch == 0) throw ContractError("baseline epochs and batch must be >= 1");
  if (!(lr > 0.0)) throw ContractError("baseline.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("baseline.momentum must be in [0,1)");
  if (!(lambda_ewc >= 0.0) || !(lambda_l2 >= 0.0)) throw ContractError("baseline lambdas must be >= 0");
  if (fisher_samples == 0) throw ContractError("baseline.fisher_samples must be >= 1");
}

AccuracyMatrix run_baseline(BaselineKind kind, const TaskStream& stream, const Topology& topology,
                            const BaselineConfig& config) {
  config.validate();
  if (stream.size() == 0) throw ContractError("baseline needs at least one task");
  Topology topo = topology;
  if (config.first_layer_width != 0) topo.layers.at(0).out = config.first_layer_width;
  topo.resolve();

  Rng rng(config.seed, 0xba5e0000ull + static_cast<std::uint64_t>(kind));
  Rng init_rng = rng.derive(1);
  std::vector<Model> models;
  models.emplace_back(topo, init_rng);
  std::vector<FisherState> fisher;
  std::vector<Tensor> anchors;
  AccuracyMatrix a;
  for (const auto& spec : stream.tasks) {
    const int t = spec.index;
    if (kind == BaselineKind::individual && t > 0) models.emplace_back(topo, init_rng);
    Model& m = models.back();
    train_task(m, spec.train, config, kind, fisher, anchors, rng);
    if (kind == BaselineKind::ewc) {
      auto named = m.named();
      fisher.push_back(estimate_fisher([&](Tape& tape, Var x) { return m.forward(tape, x); }, named, spec.train,
                                       config.fisher_samples, config.seed + static_cast<std::uint64_t>(t), t));
    } else if (kind == BaselineKind::l2) {
      anchors.clear();
      for (auto& p : m.named()) {
        anchors.emplace_back(p.tensor->shape(), std::vector<double>(p.tensor->data().begin(), p.tensor->data().end()));
      }
    }
    std::vector<double> row;
    for (int seen = 0; seen <= t; ++seen) {
      Model& eval = kind == BaselineKind::individual ? models[static_cast<std::size_t>(seen)] : m;
      row.push_back(accuracy([&](const Tensor& x) { return eval.logits(x); },
                             stream.tasks[static_cast<std::size_t>(seen)].test));
    }
    a.rows.push_back(std::move(row));
    std::size_t size = 0;
    for (auto& model : models) {
      for (auto& p : model.named()) size += p.tensor->size();
    }
    a.params_after.push_back(size);
  }
  return a;
}

}  // namespace l2g
