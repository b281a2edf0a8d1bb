#include "tseg/objectives.hpp"

#include <stdexcept>

#include "tseg/ops.hpp"

namespace tseg {

Var soft_margin_loss(Var scores, Var labels) {
  if (scores.value().size() != labels.value().size()) {
    throw ShapeError("soft_margin_loss: " + std::to_string(scores.value().size()) + " scores vs " +
                     std::to_string(labels.value().size()) + " labels");
  }
  for (double t : labels.value().data()) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("soft_margin_loss: label outside [0, 1]");
  }
  const std::size_t l = scores.value().size();
  Var z = reshape(scores, {l});
  Var t = reshape(labels, {l});
  Var pos = mul(t, log_sigmoid(z));
  Var negs = mul(add_scalar(neg(t), 1.0), log_sigmoid(neg(z)));
  return neg(sum_all(add(pos, negs)));
}

Var dice_loss(Var masks, Var targets, double eps) {
  if (masks.shape() != targets.shape()) {
    throw ShapeError("dice_loss: shape " + shape_str(masks.shape()) + " vs " + shape_str(targets.shape()));
  }
  Var inter = sum_all(mul(masks, targets));
  Var total = add_scalar(add(sum_all(masks), sum_all(targets)), eps);
  if (total.value()[0] == eps && inter.value()[0] == 0.0) {
    // empty prediction against empty target
    return scale(inter, 0.0);
  }
  return add_scalar(scale(div(inter, total), -2.0), 1.0);
}

}  // namespace tseg
