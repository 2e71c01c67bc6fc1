#include "l2g/benchmarks/oracle.hpp"

#include <algorithm>

namespace l2g {

std::vector<OracleEntry> enumerate_oracle(const SuperNet& net, const ExampleSet& train, const ExampleSet& val,
                                          const RetrainConfig& config, bool allow_adapt) {
  const ArchWeights arch = make_arch_weights(net, allow_adapt);
  std::size_t space = 1;
  for (const auto& c : arch.candidates) space *= c.size();
  if (space > kOracleBound) {
    throw ContractError("search space has " + std::to_string(space) + " structures; the oracle bound is " +
                        std::to_string(kOracleBound));
  }
  const int task = static_cast<int>(net.num_tasks());
  std::vector<OracleEntry> out;
  std::vector<std::size_t> index(arch.num_slots(), 0);
  for (std::size_t n = 0; n < space; ++n) {
    OracleEntry e;
    e.structure.task = task;
    for (std::size_t l = 0; l < index.size(); ++l) {
      const LayerChoice& c = arch.candidates[l][index[l]];
      e.structure.choices.push_back(c);
      e.added_params += param_cost(net.slot(l).spec, c.kind);
    }
    RetrainResult r = retrain(net, e.structure, train, config, {}, &val);
    e.val_accuracy = r.test_acc;
    out.push_back(std::move(e));
    for (std::size_t l = index.size(); l-- > 0;) {
      if (++index[l] < arch.candidates[l].size()) break;
      index[l] = 0;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const OracleEntry& a, const OracleEntry& b) { return a.val_accuracy > b.val_accuracy; });
  return out;
}

int oracle_rank(const std::vector<OracleEntry>& ranking, const TaskStructure& structure) {
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (ranking[i].structure.choices == structure.choices) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace l2g
