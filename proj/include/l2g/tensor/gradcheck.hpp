#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "l2g/tensor/tape.hpp"

namespace l2g {

struct GradCheckOptions {
  double step = 1e-5;
  /// Tensors larger than this are checked on a seeded random subset of this many coordinates.
  std::size_t max_coords_per_tensor = 64;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Builds the loss on a fresh tape for each evaluation.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences.
///
/// Relative error per coordinate is |a - n| / max(|a| + |n|, 1e-6). The
/// builder must register every tensor in `params` via Tape::param(); their
/// requires_grad flags and gradients are restored afterwards.
GradCheckResult grad_check(const LossBuilder& build_loss, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace l2g
