#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tseg {

struct GradCaseResult {
  std::string name;
  std::size_t points = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradSuiteOptions {
  std::size_t points = 20;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 7;
};

// Finite-difference checks over the differentiable pipelines: similarity
// through pooling and scoring for every mechanism, both objectives, the
// pixel-level Dice path and a small encoder forward pass.
std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& options = {});

}  // namespace tseg
