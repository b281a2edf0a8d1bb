#pragma once

#include "tseg/graph.hpp"

namespace tseg {

// Multi-label soft-margin loss summed over expressions:
//   sum_j -t_j log sigmoid(z_j) - (1 - t_j) log sigmoid(-z_j)
// `labels` entries must lie in [0, 1] (fractional for tf-idf pairings).
Var soft_margin_loss(Var scores, Var labels);

inline constexpr double kDiceEpsilon = 1e-6;

// 1 - 2 sum(M * G) / (sum(M) + sum(G) + eps). Two all-zero masks give 0.
Var dice_loss(Var masks, Var targets, double eps = kDiceEpsilon);

}  // namespace tseg
