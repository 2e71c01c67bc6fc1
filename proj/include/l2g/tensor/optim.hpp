#pragma once

#include <span>
#include <vector>

#include "l2g/tensor/rng.hpp"
#include "l2g/tensor/tensor.hpp"

namespace l2g {

struct SgdOptions {
  double lr = 1e-2;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// v <- m v + g + wd theta; theta <- theta - lr v.
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              const SgdOptions& options);

struct AdamOptions {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected adaptive-moment update; `step` counts from 1.
void adam_step(std::span<double> param, std::span<const double> grad, std::span<double> first_moment,
               std::span<double> second_moment, long step, const AdamOptions& options);

/// Momentum SGD over parameter groups with per-group learning-rate scale.
/// Gradients are read from Tensor::grad(); a non-finite gradient anywhere
/// aborts the whole step before any parameter is touched.
class Sgd {
 public:
  explicit Sgd(SgdOptions options) : options_(options) {}

  void add_group(std::span<Tensor* const> params, double lr_scale = 1.0);
  void step();
  void zero_grad();
  const SgdOptions& options() const { return options_; }

 private:
  struct Entry {
    Tensor* param;
    double lr_scale;
    std::vector<double> velocity;
  };
  SgdOptions options_;
  std::vector<Entry> entries_;
};

class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  void add(std::span<Tensor* const> params);
  void step();
  void zero_grad();
  long steps() const { return steps_; }

 private:
  struct Entry {
    Tensor* param;
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamOptions options_;
  std::vector<Entry> entries_;
  long steps_ = 0;
};

/// Normal init with std = sqrt(2 / fan_in).
void init_fan_in_normal(Tensor& weight, std::size_t fan_in, Rng& rng);

}  // namespace l2g
