#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tseg/config.hpp"
#include "tseg/decode.hpp"
#include "tseg/metrics.hpp"
#include "tseg/pooling.hpp"
#include "tseg/synthbench.hpp"
#include "tseg/trainer.hpp"

namespace tseg {

// How patch scores become pixel masks.
enum class DecodeMode { MPA, SPA, CAM, Logits };

const char* decode_mode_name(DecodeMode m);

// Weak GAP/GMP use CAM, weak SPA/MPA their own masks, full mode the logits.
DecodeMode decode_mode_for(const TrainConfig& config);

struct Segmentation {
  Tensor similarity;  // N x L
  Tensor scores;      // L image-level scores z
  PixelMasks masks;   // one per query, binary cleared when z < 0 if requested
};

struct SegmentOptions {
  DecodeMode mode = DecodeMode::MPA;
  PoolingConfig pooling;
  double cam_beta = 0.4;
  bool clear_absent = false;
};

Segmentation segment(const Model& model, const Image& image, std::span<const TokenSeq> queries,
                     const SegmentOptions& options);

struct PairResult {
  std::size_t scene = 0;
  std::size_t expression = 0;
  ExpressionKind kind = ExpressionKind::Shape;
  bool heldout = false;
  EvalRecord record;
};

struct EvalSummary {
  std::vector<PairResult> pairs;
  double miou = 0.0;
  std::map<std::string, double> per_kind;
  // Scene-level overlap statistics over pairs of expressions whose
  // ground-truth masks share at least one pixel.
  std::size_t overlap_scenes = 0;
  std::size_t overlap_scenes_with_pred_overlap = 0;
  std::size_t scenes_with_any_pred_overlap = 0;
  // Over [color shape] and [size color shape] queries, split by whether the
  // pair was held out of training. Unset when nothing was held out.
  std::optional<double> seen_miou;
  std::optional<double> unseen_miou;
};

// Queries every expression of each scene at once.
EvalSummary evaluate(const Model& model, std::span<const SynthScene> scenes, const SegmentOptions& options,
                     std::span<const Composition> heldout = {});

double mean_over(std::span<const PairResult> pairs);

std::uint64_t eval_data_seed(std::uint64_t seed);
std::vector<SynthScene> eval_scenes(std::uint64_t seed, std::size_t count, const GeneratorConfig& config);

SegmentOptions segment_options(const RunConfig& config);
// Held-out pairs, when present, are forced into every evaluation scene.
GeneratorConfig eval_generator(const RunConfig& config);
std::vector<SynthScene> eval_scenes(const RunConfig& config, std::uint64_t eval_seed);

struct RunOutcome {
  TrainResult trained;
  EvalSummary summary;
};

// Trains on config.train_generator() and evaluates on the eval split drawn
// from eval_seed.
RunOutcome run_experiment(const RunConfig& config, std::uint64_t eval_seed, const ProgressFn& progress = {});

}  // namespace tseg
