// Trainable parameters and the Adam update.
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>

#include "fcgan/errors.hpp"
#include "fcgan/tensor.hpp"

namespace fcgan {

// A persistent weight tensor with its optimizer state. Moments are
// shape-matched to the value; the step counter only ever increases.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor m;  // first moment
  Tensor v;  // second moment
  long long step = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor val)
      : name(std::move(n)),
        value(std::move(val)),
        m(value.shape(), 0.0),
        v(value.shape(), 0.0) {}

  std::size_t size() const { return value.size(); }
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

// One bias-corrected Adam update. A null gradient is treated as all zeros
// (the counter still advances).
inline void adam_step(std::span<Parameter* const> params,
                      std::span<const Tensor* const> grads,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters vs " + std::to_string(grads.size()) +
                         " gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const Tensor* g = grads[i];
    if (g && !g->same_shape(p.value))
      throw DimensionError("adam_step: parameter '" + p.name + "' has shape " +
                           p.value.shape_str() + " but gradient has shape " +
                           g->shape_str());
    p.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * gj;
      p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = p.m[j] / bc1;
      const double vhat = p.v[j] / bc2;
      p.value[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace fcgan
