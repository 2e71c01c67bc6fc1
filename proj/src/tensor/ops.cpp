#include "l2g/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace l2g {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ContractError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Column matrix for x [B,C,H,W]: rows index (c, ki, kj), columns index (b, oi, oj).
RowMat im2col(const Tensor& x, std::size_t kh, std::size_t kw, Conv2dGeometry g, std::size_t ho, std::size_t wo) {
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = ho * wo;
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(channels * kh * kw), static_cast<Eigen::Index>(batch * plane));
  const double* src = x.ptr();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = col.row(static_cast<Eigen::Index>((c * kh + ki) * kw + kj)).data();
        for (std::size_t b = 0; b < batch; ++b) {
          const double* img = src + (b * channels + c) * h * w;
          for (std::size_t oi = 0; oi < ho; ++oi) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t oj = 0; oj < wo; ++oj) {
              const std::ptrdiff_t jj =
                  static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
              row[b * plane + oi * wo + oj] = img[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)];
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im(const RowMat& col, std::span<double> dx, const Shape& xshape, std::size_t kh, std::size_t kw,
            Conv2dGeometry g, std::size_t ho, std::size_t wo) {
  const std::size_t batch = xshape[0], channels = xshape[1], h = xshape[2], w = xshape[3];
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = col.row(static_cast<Eigen::Index>((c * kh + ki) * kw + kj)).data();
        for (std::size_t b = 0; b < batch; ++b) {
          double* img = dx.data() + (b * channels + c) * h * w;
          for (std::size_t oi = 0; oi < ho; ++oi) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t oj = 0; oj < wo; ++oj) {
              const std::ptrdiff_t jj =
                  static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
              img[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)] += row[b * plane + oi * wo + oj];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var matmul(Var x, Var weight) {
  require_same_tape(x, weight, "matmul");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) shape_error("matmul", xv.shape(), wv.shape());
  const auto b = static_cast<Eigen::Index>(xv.dim(0));
  const auto in = static_cast<Eigen::Index>(xv.dim(1));
  const auto out = static_cast<Eigen::Index>(wv.dim(1));
  Tensor y({xv.dim(0), wv.dim(1)});
  MatMap(y.ptr(), b, out).noalias() = ConstMatMap(xv.ptr(), b, in) * ConstMatMap(wv.ptr(), in, out);
  Tape& tape = x.tape();
  const bool ng = tape.needs_grad(x) || tape.needs_grad(weight);
  return tape.record("matmul", std::move(y), ng, [x, weight, b, in, out](Tape& t, Var self) {
    ConstMatMap gy(t.grad_view(self).data(), b, out);
    if (t.needs_grad(x)) {
      MatMap(t.grad(x).data(), b, in).noalias() += gy * ConstMatMap(weight.value().ptr(), in, out).transpose();
    }
    if (t.needs_grad(weight)) {
      MatMap(t.grad(weight).data(), in, out).noalias() += ConstMatMap(x.value().ptr(), b, in).transpose() * gy;
    }
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_same_tape(x, weight, "affine");
  require_same_tape(x, bias, "affine");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) shape_error("affine", xv.shape(), wv.shape());
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_error("affine(bias)", wv.shape(), bv.shape());
  const auto b = static_cast<Eigen::Index>(xv.dim(0));
  const auto in = static_cast<Eigen::Index>(xv.dim(1));
  const auto out = static_cast<Eigen::Index>(wv.dim(1));
  Tensor y({xv.dim(0), wv.dim(1)});
  MatMap ym(y.ptr(), b, out);
  ym.noalias() = ConstMatMap(xv.ptr(), b, in) * ConstMatMap(wv.ptr(), in, out);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.ptr(), out);
  Tape& tape = x.tape();
  const bool ng = tape.needs_grad(x) || tape.needs_grad(weight) || tape.needs_grad(bias);
  return tape.record("affine", std::move(y), ng, [x, weight, bias, b, in, out](Tape& t, Var self) {
    ConstMatMap gy(t.grad_view(self).data(), b, out);
    if (t.needs_grad(x)) {
      MatMap(t.grad(x).data(), b, in).noalias() += gy * ConstMatMap(weight.value().ptr(), in, out).transpose();
    }
    if (t.needs_grad(weight)) {
      MatMap(t.grad(weight).data(), in, out).noalias() += ConstMatMap(x.value().ptr(), b, in).transpose() * gy;
    }
    if (t.needs_grad(bias)) {
      auto gb = t.grad(bias);
      // Fixed row order keeps the reduction bitwise reproducible.
      for (Eigen::Index r = 0; r < b; ++r) {
        for (Eigen::Index c = 0; c < out; ++c) gb[static_cast<std::size_t>(c)] += gy(r, c);
      }
    }
  });
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, Conv2dGeometry geometry) {
  if (geometry.stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * geometry.padding;
  if (kernel > padded) {
    throw ContractError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                        std::to_string(padded));
  }
  return (padded - kernel) / geometry.stride + 1;
}

Var conv2d(Var x, Var kernel, std::optional<Var> bias, Conv2dGeometry geometry) {
  require_same_tape(x, kernel, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1)) shape_error("conv2d", xv.shape(), kv.shape());
  if (bias) {
    require_same_tape(x, *bias, "conv2d");
    if (bias->value().rank() != 1 || bias->value().dim(0) != kv.dim(0)) {
      shape_error("conv2d(bias)", kv.shape(), bias->value().shape());
    }
  }
  const std::size_t batch = xv.dim(0), out_ch = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  const std::size_t ho = conv_output_extent(xv.dim(2), kh, geometry);
  const std::size_t wo = conv_output_extent(xv.dim(3), kw, geometry);
  const std::size_t plane = ho * wo;
  const auto rows = static_cast<Eigen::Index>(kv.dim(1) * kh * kw);
  const auto cols = static_cast<Eigen::Index>(batch * plane);
  const auto oc = static_cast<Eigen::Index>(out_ch);

  RowMat col = im2col(xv, kh, kw, geometry, ho, wo);
  RowMat prod = ConstMatMap(kv.ptr(), oc, rows) * col;

  Tensor y({batch, out_ch, ho, wo});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double add = bias ? bias->value()[o] : 0.0;
      const double* src = prod.row(static_cast<Eigen::Index>(o)).data() + b * plane;
      double* dst = y.ptr() + (b * out_ch + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + add;
    }
  }

  Tape& tape = x.tape();
  const bool kernel_grad = tape.needs_grad(kernel);
  const bool ng = tape.needs_grad(x) || kernel_grad || (bias && tape.needs_grad(*bias));
  if (!kernel_grad) col.resize(0, 0);
  return tape.record(
      "conv2d", std::move(y), ng,
      [x, kernel, bias, geometry, batch, out_ch, kh, kw, ho, wo, plane, rows, cols, oc,
       col = std::move(col)](Tape& t, Var self) {
        auto gy = t.grad_view(self);
        RowMat gmat(oc, cols);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_ch; ++o) {
            const double* src = gy.data() + (b * out_ch + o) * plane;
            double* dst = gmat.row(static_cast<Eigen::Index>(o)).data() + b * plane;
            std::copy(src, src + plane, dst);
          }
        }
        if (bias && t.needs_grad(*bias)) {
          auto gb = t.grad(*bias);
          for (std::size_t o = 0; o < out_ch; ++o) {
            const double* row = gmat.row(static_cast<Eigen::Index>(o)).data();
            double acc = 0.0;
            for (Eigen::Index c = 0; c < cols; ++c) acc += row[c];
            gb[o] += acc;
          }
        }
        if (t.needs_grad(kernel)) {
          MatMap(t.grad(kernel).data(), oc, rows).noalias() += gmat * col.transpose();
        }
        if (t.needs_grad(x)) {
          RowMat dcol = ConstMatMap(kernel.value().ptr(), oc, rows).transpose() * gmat;
          col2im(dcol, t.grad(x), x.value().shape(), kh, kw, geometry, ho, wo);
        }
      });
}

Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tape& tape = x.tape();
  return tape.record("relu", std::move(y), tape.needs_grad(x), [x](Tape& t, Var self) {
    auto gy = t.grad_view(self);
    auto gx = t.grad(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var max_pool2d(Var x, std::size_t window) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ContractError("max_pool2d: expected [B,C,H,W], got " + to_string(xv.shape()));
  if (window == 0 || xv.dim(2) % window != 0 || xv.dim(3) % window != 0) {
    throw ContractError("max_pool2d: window " + std::to_string(window) + " does not divide spatial dims of " +
                        to_string(xv.shape()));
  }
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t ho = h / window, wo = w / window;
  Tensor y({xv.dim(0), xv.dim(1), ho, wo});
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* img = xv.ptr() + p * h * w;
    for (std::size_t oi = 0; oi < ho; ++oi) {
      for (std::size_t oj = 0; oj < wo; ++oj) {
        std::size_t best = (oi * window) * w + oj * window;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (oi * window + di) * w + oj * window + dj;
            if (img[idx] > img[best]) best = idx;
          }
        }
        const std::size_t out = (p * ho + oi) * wo + oj;
        y[out] = img[best];
        argmax[out] = p * h * w + best;
      }
    }
  }
  Tape& tape = x.tape();
  return tape.record("max_pool2d", std::move(y), tape.needs_grad(x),
                     [x, argmax = std::move(argmax)](Tape& t, Var self) {
                       auto gy = t.grad_view(self);
                       auto gx = t.grad(x);
                       for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
                     });
}

Var flatten(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ContractError("flatten: rank-0 input");
  const std::size_t batch = xv.dim(0);
  Tensor y = xv.reshaped({batch, xv.size() / batch});
  Tape& tape = x.tape();
  return tape.record("flatten", std::move(y), tape.needs_grad(x), [x](Tape& t, Var self) {
    add_into(t.grad(x), t.grad_view(self));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  Tape& tape = a.tape();
  return tape.record("add", std::move(y), tape.needs_grad(a) || tape.needs_grad(b), [a, b](Tape& t, Var self) {
    auto gy = t.grad_view(self);
    if (t.needs_grad(a)) add_into(t.grad(a), gy);
    if (t.needs_grad(b)) add_into(t.grad(b), gy);
  });
}

Var scale(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  Tape& tape = a.tape();
  return tape.record("scale", std::move(y), tape.needs_grad(a), [a, factor](Tape& t, Var self) {
    auto gy = t.grad_view(self);
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * gy[i];
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  Tape& tape = a.tape();
  return tape.record("sum", Tensor({1}, {acc}), tape.needs_grad(a), [a](Tape& t, Var self) {
    const double g = t.grad_view(self)[0];
    for (double& v : t.grad(a)) v += g;
  });
}

Var softmax(Var logits) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) throw ContractError("softmax: expected a 1-D vector, got " + to_string(lv.shape()));
  const double m = *std::max_element(lv.data().begin(), lv.data().end());
  Tensor y(lv.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    y[i] = std::exp(lv[i] - m);
    z += y[i];
  }
  for (double& v : y.data()) v /= z;
  Tape& tape = logits.tape();
  return tape.record("softmax", std::move(y), tape.needs_grad(logits), [logits](Tape& t, Var self) {
    auto gy = t.grad_view(self);
    const Tensor& p = t.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += gy[i] * p[i];
    auto gx = t.grad(logits);
    for (std::size_t i = 0; i < p.size(); ++i) gx[i] += p[i] * (gy[i] - inner);
  });
}

Var dot(Var v, std::span<const double> weights) {
  const Tensor& vv = v.value();
  if (vv.size() != weights.size()) {
    throw ContractError("dot: length mismatch " + std::to_string(vv.size()) + " vs " + std::to_string(weights.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < vv.size(); ++i) acc += vv[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  Tape& tape = v.tape();
  return tape.record("dot", Tensor({1}, {acc}), tape.needs_grad(v), [v, w = std::move(w)](Tape& t, Var self) {
    const double g = t.grad_view(self)[0];
    auto gv = t.grad(v);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g * w[i];
  });
}

Var mix(Var weights, std::span<const Var> branches) {
  const Tensor& wv = weights.value();
  if (branches.empty()) throw ContractError("mix: no branches");
  if (wv.rank() != 1 || wv.size() != branches.size()) {
    throw ContractError("mix: " + std::to_string(branches.size()) + " branches but weights of shape " +
                        to_string(wv.shape()));
  }
  const Shape& shape = branches.front().shape();
  Tape& tape = weights.tape();
  bool ng = tape.needs_grad(weights);
  for (const Var& b : branches) {
    require_same_tape(weights, b, "mix");
    if (b.shape() != shape) shape_error("mix", shape, b.shape());
    ng = ng || tape.needs_grad(b);
  }
  Tensor y(shape);
  for (std::size_t c = 0; c < branches.size(); ++c) {
    const Tensor& bv = branches[c].value();
    const double w = wv[c];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += w * bv[i];
  }
  std::vector<Var> kept(branches.begin(), branches.end());
  return tape.record("mix", std::move(y), ng, [weights, kept = std::move(kept)](Tape& t, Var self) {
    auto gy = t.grad_view(self);
    const Tensor& wv = weights.value();
    for (std::size_t c = 0; c < kept.size(); ++c) {
      if (t.needs_grad(weights)) {
        const Tensor& bv = kept[c].value();
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * bv[i];
        t.grad(weights)[c] += acc;
      }
      if (t.needs_grad(kept[c])) {
        auto gb = t.grad(kept[c]);
        const double w = wv[c];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += w * gy[i];
      }
    }
  });
}

Var weighted_sq_distance(Var theta, const Tensor& anchor, const Tensor* weights) {
  const Tensor& tv = theta.value();
  if (tv.shape() != anchor.shape()) shape_error("weighted_sq_distance", tv.shape(), anchor.shape());
  if (weights != nullptr && weights->shape() != anchor.shape()) {
    shape_error("weighted_sq_distance(weights)", anchor.shape(), weights->shape());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < tv.size(); ++i) {
    const double d = tv[i] - anchor[i];
    acc += (weights != nullptr ? (*weights)[i] : 1.0) * d * d;
  }
  Tape& tape = theta.tape();
  return tape.record("weighted_sq_distance", Tensor({1}, {acc}), tape.needs_grad(theta),
                     [theta, &anchor, weights](Tape& t, Var self) {
                       const double g = t.grad_view(self)[0];
                       const Tensor& tv = theta.value();
                       auto gt = t.grad(theta);
                       for (std::size_t i = 0; i < gt.size(); ++i) {
                         const double w = weights != nullptr ? (*weights)[i] : 1.0;
                         gt[i] += g * 2.0 * w * (tv[i] - anchor[i]);
                       }
                     });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    throw ContractError("softmax_cross_entropy: logits " + to_string(lv.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  std::vector<double> probs(lv.size());
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                          std::to_string(classes) + ")");
    }
    const double* row = lv.ptr() + r * classes;
    const double m = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = std::exp(row[c] - m);
      z += probs[r * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= z;
    total += (m + std::log(z)) - row[label];
  }
  std::vector<int> kept(labels.begin(), labels.end());
  Tape& tape = logits.tape();
  return tape.record("softmax_cross_entropy", Tensor({1}, {total / static_cast<double>(batch)}),
                     tape.needs_grad(logits),
                     [logits, batch, classes, probs = std::move(probs), kept = std::move(kept)](Tape& t, Var self) {
                       const double g = t.grad_view(self)[0] / static_cast<double>(batch);
                       auto gl = t.grad(logits);
                       for (std::size_t r = 0; r < batch; ++r) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double target = static_cast<int>(c) == kept[r] ? 1.0 : 0.0;
                           gl[r * classes + c] += g * (probs[r * classes + c] - target);
                         }
                       }
                     });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ContractError("argmax_rows: expected [B,C], got " + to_string(logits.shape()));
  const std::size_t classes = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.ptr() + r * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace l2g
