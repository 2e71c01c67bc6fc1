#pragma once

#include <vector>

#include "l2g/retrain/retrain.hpp"
#include "l2g/search/search.hpp"

namespace l2g {

inline constexpr std::size_t kOracleBound = 64;

struct OracleEntry {
  TaskStructure structure;
  double val_accuracy = 0.0;
  std::size_t added_params = 0;
};

/// Retrains every discrete structure for the next task of `net` with the same
/// config and ranks them by validation accuracy (stable in enumeration order).
/// Throws ContractError when the space exceeds kOracleBound.
std::vector<OracleEntry> enumerate_oracle(const SuperNet& net, const ExampleSet& train, const ExampleSet& val,
                                          const RetrainConfig& config, bool allow_adapt);

/// Rank (0-based) of `structure` in `ranking`, or -1 if absent.
int oracle_rank(const std::vector<OracleEntry>& ranking, const TaskStructure& structure);

}  // namespace l2g
