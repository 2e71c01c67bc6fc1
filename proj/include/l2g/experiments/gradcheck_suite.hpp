#pragma once

#include <functional>
#include <string>
#include <vector>

#include "l2g/tensor/gradcheck.hpp"

namespace l2g {

struct GradCheckCase {
  std::string op;
  std::function<GradCheckResult()> run;
};

struct GradCheckRow {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  bool passed = false;
  std::string error;  ///< set when the case threw
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// One case per differentiable op used by the search and retraining code.
std::vector<GradCheckCase> default_gradcheck_cases();

std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<GradCheckCase>& cases,
                                              double tolerance = kGradCheckTolerance);

}  // namespace l2g
