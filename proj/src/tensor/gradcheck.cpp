#include "l2g/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "l2g/tensor/rng.hpp"

namespace l2g {
namespace {

double evaluate(const LossBuilder& build_loss) {
  Tape tape;
  return build_loss(tape).value()[0];
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build_loss, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  struct Saved {
    bool requires_grad;
    std::vector<double> grad;
  };
  std::vector<Saved> saved;
  saved.reserve(params.size());
  for (Tensor* p : params) {
    saved.push_back({p->requires_grad(), std::vector<double>(p->grad().begin(), p->grad().end())});
    p->set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    tape.backward(build_loss(tape));
    for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  }
  // Forward-only evaluations from here on.
  for (Tensor* p : params) p->set_requires_grad(false);

  Rng rng(options.seed, 0x67726164);
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = p[i];
      p[i] = original + options.step;
      const double plus = evaluate(build_loss);
      p[i] = original - options.step;
      const double minus = evaluate(build_loss);
      p[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.coords_checked;
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->set_requires_grad(saved[k].requires_grad);
    if (saved[k].requires_grad) std::copy(saved[k].grad.begin(), saved[k].grad.end(), params[k]->grad().begin());
  }
  return result;
}

}  // namespace l2g
