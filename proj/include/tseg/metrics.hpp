#pragma once

#include <cstddef>
#include <span>

#include "tseg/image.hpp"

namespace tseg {

struct EvalRecord {
  std::size_t intersection = 0;
  std::size_t union_area = 0;
  double iou = 1.0;
};

// Both masks empty counts as a perfect match. Throws ShapeError on size mismatch.
EvalRecord evaluate_pair(const BinaryMask& pred, const BinaryMask& gt);
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Unweighted mean of per-pair IoU. Throws std::invalid_argument when empty.
double mean_iou(std::span<const EvalRecord> records);

}  // namespace tseg
