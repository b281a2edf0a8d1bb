#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tseg/encoders.hpp"

namespace tseg {

using GradMap = std::map<std::string, Tensor>;

// gamma0 * (1 - n / total)^0.9
double poly_lr(double base_lr, std::uint64_t n, std::uint64_t total);

// theta <- theta - lr * (g + wd * theta). Parameters without a gradient entry
// are left untouched.
void sgd_step(ParamSet& params, const GradMap& grads, double lr, double weight_decay);

struct MomentumState {
  std::map<std::string, std::vector<double>> buffer;
};

// Heavy-ball form: b <- mu * b + (g + wd * theta), theta <- theta - lr * b.
// The first step with mu = 0 equals sgd_step.
void sgd_momentum_step(ParamSet& params, const GradMap& grads, MomentumState& state, double lr, double momentum,
                       double weight_decay);

struct AdamWState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
};

// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(ParamSet& params, const GradMap& grads, AdamWState& state, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8, double weight_decay = 1e-2);

}  // namespace tseg
