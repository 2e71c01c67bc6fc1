#include "l2g/tensor/optim.hpp"

#include <cmath>
#include <string>

namespace l2g {
namespace {

void require_finite(std::span<const double> grad, const char* who) {
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError(std::string(who) + ": non-finite gradient, step aborted");
  }
}

void require_trainable(const Tensor* p, const char* who) {
  if (p == nullptr || !p->requires_grad()) {
    throw ContractError(std::string(who) + ": parameter must have requires_grad set");
  }
}

}  // namespace

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              const SgdOptions& options) {
  if (!(options.lr > 0.0)) throw ContractError("sgd_step: lr must be positive");
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ContractError("sgd_step: param/grad/velocity length mismatch");
  }
  require_finite(grad, "sgd_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = options.momentum * velocity[i] + grad[i] + options.weight_decay * param[i];
    param[i] -= options.lr * velocity[i];
  }
}

void adam_step(std::span<double> param, std::span<const double> grad, std::span<double> first_moment,
               std::span<double> second_moment, long step, const AdamOptions& options) {
  if (!(options.lr > 0.0)) throw ContractError("adam_step: lr must be positive");
  if (step < 1) throw ContractError("adam_step: step counts from 1");
  if (param.size() != grad.size() || param.size() != first_moment.size() || param.size() != second_moment.size()) {
    throw ContractError("adam_step: length mismatch");
  }
  require_finite(grad, "adam_step");
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    first_moment[i] = options.beta1 * first_moment[i] + (1.0 - options.beta1) * grad[i];
    second_moment[i] = options.beta2 * second_moment[i] + (1.0 - options.beta2) * grad[i] * grad[i];
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    param[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
  }
}

void Sgd::add_group(std::span<Tensor* const> params, double lr_scale) {
  if (!(lr_scale > 0.0)) throw ContractError("Sgd: lr_scale must be positive");
  for (Tensor* p : params) {
    require_trainable(p, "Sgd");
    entries_.push_back({p, lr_scale, std::vector<double>(p->size(), 0.0)});
  }
}

void Sgd::step() {
  for (const Entry& e : entries_) require_finite(e.param->grad(), "Sgd");
  for (Entry& e : entries_) {
    SgdOptions scaled = options_;
    scaled.lr *= e.lr_scale;
    sgd_step(e.param->data(), e.param->grad(), e.velocity, scaled);
  }
}

void Sgd::zero_grad() {
  for (Entry& e : entries_) e.param->zero_grad();
}

void Adam::add(std::span<Tensor* const> params) {
  for (Tensor* p : params) {
    require_trainable(p, "Adam");
    entries_.push_back({p, std::vector<double>(p->size(), 0.0), std::vector<double>(p->size(), 0.0)});
  }
}

void Adam::step() {
  for (const Entry& e : entries_) require_finite(e.param->grad(), "Adam");
  ++steps_;
  for (Entry& e : entries_) adam_step(e.param->data(), e.param->grad(), e.m, e.v, steps_, options_);
}

void Adam::zero_grad() {
  for (Entry& e : entries_) e.param->zero_grad();
}

void init_fan_in_normal(Tensor& weight, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ContractError("init_fan_in_normal: fan_in must be positive");
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : weight.data()) v = rng.normal(0.0, std);
}

}  // namespace l2g
