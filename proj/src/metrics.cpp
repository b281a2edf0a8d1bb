#include "tseg/metrics.hpp"

#include <stdexcept>

#include "tseg/tensor.hpp"

namespace tseg {

EvalRecord evaluate_pair(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.bits.size() != gt.bits.size()) {
    throw ShapeError("iou: mask sizes differ");
  }
  EvalRecord r;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    r.intersection += a && b;
    r.union_area += a || b;
  }
  r.iou = r.union_area == 0 ? 1.0 : static_cast<double>(r.intersection) / static_cast<double>(r.union_area);
  return r;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) { return evaluate_pair(pred, gt).iou; }

double mean_iou(std::span<const EvalRecord> records) {
  if (records.empty()) throw std::invalid_argument("mean_iou: no records");
  double total = 0.0;
  for (const auto& r : records) total += r.iou;
  return total / static_cast<double>(records.size());
}

}  // namespace tseg
