#include "tseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tseg {
namespace {

double eval_scalar(const GraphBuilder& fn, std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  const double v = fn(g, leaves).value().item();
  if (!std::isfinite(v)) throw NonFiniteError("gradcheck: non-finite function value");
  return v;
}

}  // namespace

Tensor forward(const GraphBuilder& fn, std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  return fn(g, leaves).value();
}

std::vector<Tensor> gradients(const GraphBuilder& fn, std::span<const Tensor> point) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : point) leaves.push_back(g.leaf(t, true));
  Var seed = fn(g, leaves);
  g.backward(seed);
  std::vector<Tensor> out;
  for (const Var& v : leaves) out.push_back(g.grad(v));
  return out;
}

double gradcheck(const GraphBuilder& fn, std::span<const Tensor> point, double step) {
  if (!(step > 0.0 && step <= 1e-3)) throw DomainError("gradcheck: step must lie in (0, 1e-3]");
  const auto analytic = gradients(fn, point);
  std::vector<Tensor> probe(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    if (!analytic[t].all_finite()) throw NonFiniteError("gradcheck: non-finite analytic gradient");
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double x0 = probe[t][i];
      probe[t][i] = x0 + step;
      const double up = eval_scalar(fn, probe);
      probe[t][i] = x0 - step;
      const double down = eval_scalar(fn, probe);
      probe[t][i] = x0;
      const double fd = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[t][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace tseg
