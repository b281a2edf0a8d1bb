#include "tseg/pooling.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "tseg/ops.hpp"

namespace tseg {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::GAP: return "gap";
    case Mechanism::GMP: return "gmp";
    case Mechanism::SPA: return "spa";
    case Mechanism::MPA: return "mpa";
  }
  return "?";
}

std::optional<Mechanism> parse_mechanism(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "gap") return Mechanism::GAP;
  if (t == "gmp") return Mechanism::GMP;
  if (t == "spa") return Mechanism::SPA;
  if (t == "mpa") return Mechanism::MPA;
  return std::nullopt;
}

void PoolingConfig::validate() const {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("pooling: lambda must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw std::invalid_argument("pooling: epsilon must be positive");
  if (!(p >= 0.0)) throw std::invalid_argument("pooling: p must be >= 0");
}

namespace {

void require_matrix(Var s, const char* what) {
  if (s.shape().size() != 2) {
    throw ShapeError(std::string(what) + ": similarity must be an N x L matrix, got " + shape_str(s.shape()));
  }
}

}  // namespace

Var gap_scores(Var similarity) {
  require_matrix(similarity, "gap_scores");
  return mean(similarity, 0);
}

Var gmp_scores(Var similarity) {
  require_matrix(similarity, "gmp_scores");
  return max(similarity, 0);
}

Var spa_masks(Var similarity, double s_bg) {
  require_matrix(similarity, "spa_masks");
  const std::size_t n = similarity.shape()[0];
  Var bg = similarity.graph().constant(Tensor({n, 1}, s_bg));
  const Var cols[] = {bg, similarity};
  return softmax(concat(cols, 1), 1);
}

Var mpa_masks(Var similarity, double s_bg) {
  require_matrix(similarity, "mpa_masks");
  return sigmoid(s_bg == 0.0 ? similarity : add_scalar(similarity, -s_bg));
}

Var gwp_scores(Var similarity, Var masks, double epsilon) {
  require_matrix(similarity, "gwp_scores");
  if (masks.shape() != similarity.shape()) {
    throw ShapeError("gwp_scores: mask shape " + shape_str(masks.shape()) + " does not match similarity " +
                     shape_str(similarity.shape()));
  }
  for (double m : masks.value().data()) {
    if (m < 0.0) throw DomainError("gwp_scores: negative mask entry");
  }
  Var weights = div(masks, add_scalar(sum(masks, 0), epsilon));
  return sum(mul(weights, similarity), 0);
}

Var size_scores(Var masks, double lambda, double p) {
  if (!(lambda > 0.0)) throw DomainError("size_scores: lambda must be positive");
  Var mbar = mean(masks, 0);
  return mul(pow(add_scalar(neg(mbar), 1.0), p), log(add_scalar(mbar, lambda)));
}

ScoreSet image_text_scores(Var similarity, const PoolingConfig& config) {
  config.validate();
  ScoreSet out;
  switch (config.mechanism) {
    case Mechanism::GAP:
      out.z = gap_scores(similarity);
      return out;
    case Mechanism::GMP:
      out.z = gmp_scores(similarity);
      return out;
    case Mechanism::SPA: {
      out.masks = spa_masks(similarity, config.s_bg);
      const std::size_t l = similarity.shape()[1];
      Var fg = slice(out.masks, 1, 1, l + 1);
      out.z_gwp = gwp_scores(similarity, fg, config.epsilon);
      out.z_size = size_scores(fg, config.lambda, config.p);
      break;
    }
    case Mechanism::MPA:
      out.masks = mpa_masks(similarity, config.s_bg);
      out.z_gwp = gwp_scores(similarity, out.masks, config.epsilon);
      out.z_size = size_scores(out.masks, config.lambda, config.p);
      break;
  }
  out.z = add(out.z_gwp, out.z_size);
  return out;
}

}  // namespace tseg
