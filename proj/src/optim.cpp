#include "tseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tseg {

double poly_lr(double base_lr, std::uint64_t n, std::uint64_t total) {
  if (total == 0) throw std::invalid_argument("poly_lr: total iterations must be positive");
  if (n > total) throw std::invalid_argument("poly_lr: iteration past the schedule end");
  const double frac = 1.0 - static_cast<double>(n) / static_cast<double>(total);
  return base_lr * std::pow(frac, 0.9);
}

namespace {

const Tensor* grad_for(const GradMap& grads, const std::string& name, const Tensor& param) {
  auto it = grads.find(name);
  if (it == grads.end()) return nullptr;
  if (it->second.shape() != param.shape()) {
    throw ShapeError("gradient for '" + name + "' has shape " + shape_str(it->second.shape()) +
                     ", parameter has " + shape_str(param.shape()));
  }
  return &it->second;
}

}  // namespace

void sgd_step(ParamSet& params, const GradMap& grads, double lr, double weight_decay) {
  for (auto& [name, theta] : params) {
    const Tensor* g = grad_for(grads, name, theta);
    if (!g) continue;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * ((*g)[i] + weight_decay * theta[i]);
  }
}

void sgd_momentum_step(ParamSet& params, const GradMap& grads, MomentumState& state, double lr, double momentum,
                       double weight_decay) {
  for (auto& [name, theta] : params) {
    const Tensor* g = grad_for(grads, name, theta);
    if (!g) continue;
    auto& b = state.buffer[name];
    const bool fresh = b.empty();
    if (fresh) b.assign(theta.size(), 0.0);
    if (b.size() != theta.size()) throw ShapeError("sgd_momentum_step: buffer size mismatch for '" + name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = (*g)[i] + weight_decay * theta[i];
      b[i] = fresh ? d : momentum * b[i] + d;
      theta[i] -= lr * b[i];
    }
  }
}

void adamw_step(ParamSet& params, const GradMap& grads, AdamWState& state, double lr, double beta1, double beta2,
                double eps, double weight_decay) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    const Tensor* g = grad_for(grads, name, theta);
    if (!g) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    if (m.size() != theta.size()) throw ShapeError("adamw_step: moment size mismatch for '" + name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] *= 1.0 - lr * weight_decay;
      m[i] = beta1 * m[i] + (1.0 - beta1) * (*g)[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * (*g)[i] * (*g)[i];
      theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

}  // namespace tseg
