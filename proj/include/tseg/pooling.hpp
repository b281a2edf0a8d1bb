#pragma once

#include <optional>
#include <string>

#include "tseg/graph.hpp"

// Reduction of an N x L patch-text similarity matrix to L image-level scores.
namespace tseg {

enum class Mechanism { GAP, GMP, SPA, MPA };

const char* mechanism_name(Mechanism m);
// Accepts "gap", "gmp", "spa", "mpa" in any case.
std::optional<Mechanism> parse_mechanism(const std::string& text);

struct PoolingConfig {
  Mechanism mechanism = Mechanism::MPA;
  double epsilon = 1e-5;  // weight-normalization guard
  double lambda = 0.01;   // size penalty offset
  double p = 5.0;         // size penalty focal exponent
  double s_bg = 0.0;      // background logit

  bool has_masks() const { return mechanism == Mechanism::SPA || mechanism == Mechanism::MPA; }
  // Throws std::invalid_argument unless lambda in (0, 1], epsilon > 0, p >= 0.
  void validate() const;
};

// z_j = mean_i s_ij
Var gap_scores(Var similarity);
// z_j = max_i s_ij
Var gmp_scores(Var similarity);

// N x (L+1) softmax assignment; column 0 is the constant background logit.
Var spa_masks(Var similarity, double s_bg);
// N x L, m_ij = sigmoid(s_ij - s_bg); columns are independent.
Var mpa_masks(Var similarity, double s_bg);

// w_ij = m_ij / (sum_i m_ij + eps), z_j = sum_i w_ij s_ij. `masks` must match
// the similarity shape (drop the SPA background column first). Throws
// DomainError on negative mask entries.
Var gwp_scores(Var similarity, Var masks, double epsilon);

// (1 - mbar_j)^p * log(lambda + mbar_j), mbar_j = mean_i m_ij.
Var size_scores(Var masks, double lambda, double p);

struct ScoreSet {
  Var z;
  Var z_gwp;   // SPA/MPA only
  Var z_size;  // SPA/MPA only
  Var masks;   // SPA: N x (L+1) with background; MPA: N x L; unset for GAP/GMP
};

// z = z_gwp + z_size for SPA/MPA; plain GAP/GMP scores otherwise.
ScoreSet image_text_scores(Var similarity, const PoolingConfig& config);

}  // namespace tseg
