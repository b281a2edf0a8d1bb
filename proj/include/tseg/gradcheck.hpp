#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tseg/graph.hpp"

namespace tseg {

// Builds a scalar-valued computation from leaf inputs bound in `graph`.
using GraphBuilder = std::function<Var(Graph& graph, std::span<const Var> inputs)>;

// Evaluates `fn` on fresh constant leaves and returns the seed value.
Tensor forward(const GraphBuilder& fn, std::span<const Tensor> inputs);

// Analytic gradients of the scalar `fn` at `point`, one tensor per input.
std::vector<Tensor> gradients(const GraphBuilder& fn, std::span<const Tensor> point);

// Max over every input coordinate of
//   |analytic - central difference| / max(1, |central difference|).
// `step` must lie in (0, 1e-3]. Throws NonFiniteError on a non-finite value.
double gradcheck(const GraphBuilder& fn, std::span<const Tensor> point, double step = 1e-5);

}  // namespace tseg
