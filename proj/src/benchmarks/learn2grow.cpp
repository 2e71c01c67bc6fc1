#include "l2g/benchmarks/learn2grow.hpp"

#include <sstream>

namespace l2g {
namespace {

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

void tagged(std::ostream* out, const char* stage, int task, const std::string& lines) {
  if (out == nullptr) return;
  std::istringstream in(lines);
  for (std::string line; std::getline(in, line);) {
    *out << "{\"stage\":\"" << stage << "\",\"task\":" << task << ",\"record\":" << line << "}\n";
  }
}

}  // namespace

double task_accuracy(const SuperNet& net, int task, const ExampleSet& test) {
  return accuracy([&](const Tensor& x) { return net.logits(x, task); }, test);
}

Learn2GrowRun run_learn2grow(const TaskStream& stream, const Topology& topology, const SearchConfig& search_config,
                             const RetrainConfig& retrain_config, const Learn2GrowOptions& options) {
  if (stream.size() == 0) throw ContractError("learn-to-grow needs at least one task");
  Topology topo = topology;
  topo.resolve();
  if (topo.input_shape != stream.input_shape()) {
    throw ContractError("topology input " + to_string(topo.input_shape) + " does not match stream input " +
                        to_string(stream.input_shape()));
  }
  Learn2GrowRun run{SuperNet(topo, stream.head_mode), {}, {}, {}, {}, {}};
  std::vector<FisherState> fisher;
  std::vector<Tensor> probes;
  for (const auto& spec : stream.tasks) {
    probes.push_back(gather(spec.test, first_rows(std::min(options.probe_size, spec.test.size()))).inputs);
  }

  for (const auto& spec : stream.tasks) {
    const int t = spec.index;
    if (spec.num_classes != topo.num_classes) {
      throw StageError("setup", t, "task has " + std::to_string(spec.num_classes) + " classes, topology head has " +
                                       std::to_string(topo.num_classes));
    }
    TaskStructure structure{t, std::vector<LayerChoice>(topo.layers.size())};
    std::vector<SearchEpoch> search_trace;
    if (t > 0) {
      try {
        std::ostringstream lines;
        SearchResult sr = search(run.net, t, spec.train, search_config, options.trace ? &lines : nullptr);
        tagged(options.trace, "search", t, lines.str());
        structure = sr.structure;
        search_trace = std::move(sr.trace);
      } catch (const ContractError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError("search", t, e.what());
      }
    }
    RetrainResult rr;
    try {
      std::ostringstream lines;
      rr = retrain(run.net, structure, spec.train, retrain_config, fisher, nullptr, options.trace ? &lines : nullptr);
      tagged(options.trace, "retrain", t, lines.str());
    } catch (const ContractError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("retrain", t, e.what());
    }
    run.growth.push_back(run.net.commit(rr.request));
    run.structures.push_back(run.net.structure(t));
    run.search_traces.push_back(std::move(search_trace));
    if (retrain_config.strategy.kind == StrategyKind::tune_ewc) {
      fisher.push_back(task_fisher(run.net, t, spec.train, retrain_config.strategy.fisher_samples,
                                   retrain_config.seed + static_cast<std::uint64_t>(t)));
    }

    std::vector<double> row;
    std::vector<Tensor> logits;
    for (int seen = 0; seen <= t; ++seen) {
      row.push_back(task_accuracy(run.net, seen, stream.tasks[static_cast<std::size_t>(seen)].test));
      logits.push_back(run.net.logits(probes[static_cast<std::size_t>(seen)], seen));
    }
    run.accuracy.rows.push_back(std::move(row));
    run.accuracy.params_after.push_back(run.net.total_params());
    run.probe_logits.push_back(std::move(logits));
  }
  return run;
}

}  // namespace l2g
