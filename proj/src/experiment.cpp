#include "tseg/experiment.hpp"

#include <stdexcept>

#include "tseg/ops.hpp"
#include "tseg/rng.hpp"

namespace tseg {

const char* decode_mode_name(DecodeMode m) {
  switch (m) {
    case DecodeMode::MPA: return "mpa";
    case DecodeMode::SPA: return "spa";
    case DecodeMode::CAM: return "cam";
    case DecodeMode::Logits: return "logits";
  }
  return "?";
}

DecodeMode decode_mode_for(const TrainConfig& config) {
  if (config.mode == TrainMode::Full) return DecodeMode::Logits;
  switch (config.pooling.mechanism) {
    case Mechanism::MPA: return DecodeMode::MPA;
    case Mechanism::SPA: return DecodeMode::SPA;
    default: return DecodeMode::CAM;
  }
}

Segmentation segment(const Model& model, const Image& image, std::span<const TokenSeq> queries,
                     const SegmentOptions& options) {
  if (queries.empty()) throw std::invalid_argument("segment: no queries");
  const EncoderConfig& enc = model.config();
  Graph g;
  BoundModel bm(g, model, false);
  Var s = similarity_matrix(bm, encode_image(bm, image), encode_texts(bm, queries));
  const DecodeGeometry geo{enc.grid_h(), enc.grid_w(), enc.image_height, enc.image_width};
  PoolingConfig pooling = options.pooling;
  Segmentation out{s.value(), Tensor({queries.size()}), {}};
  switch (options.mode) {
    case DecodeMode::MPA:
    case DecodeMode::Logits: {
      pooling.mechanism = Mechanism::MPA;
      auto set = image_text_scores(s, pooling);
      out.scores = set.z.value();
      out.masks = options.mode == DecodeMode::MPA ? decode_mpa(set.masks.value(), geo) : decode_logits(s.value(), geo);
      break;
    }
    case DecodeMode::SPA: {
      pooling.mechanism = Mechanism::SPA;
      auto set = image_text_scores(s, pooling);
      out.scores = set.z.value();
      out.masks = decode_spa(set.masks.value(), geo);
      break;
    }
    case DecodeMode::CAM: {
      const bool gmp = pooling.mechanism == Mechanism::GMP;
      out.scores = (gmp ? gmp_scores(s) : gap_scores(s)).value();
      out.masks = decode_cam(s.value(), options.cam_beta, geo);
      break;
    }
  }
  if (options.clear_absent) {
    for (std::size_t j = 0; j < out.masks.size(); ++j) {
      if (out.scores[j] < 0.0) std::fill(out.masks[j].binary.bits.begin(), out.masks[j].binary.bits.end(), 0);
    }
  }
  return out;
}

namespace {

bool overlaps(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (a.bits[i] && b.bits[i]) return true;
  }
  return false;
}

}  // namespace

double mean_over(std::span<const PairResult> pairs) {
  std::vector<EvalRecord> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) records.push_back(p.record);
  return mean_iou(records);
}

EvalSummary evaluate(const Model& model, std::span<const SynthScene> scenes, const SegmentOptions& options,
                     std::span<const Composition> heldout) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  EvalSummary out;
  std::map<std::string, std::vector<EvalRecord>> by_kind;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SynthScene& scene = scenes[si];
    std::vector<TokenSeq> queries;
    for (const auto& e : scene.expressions) queries.push_back(e.tokens);
    const Segmentation seg = segment(model, scene.image, queries, options);
    for (std::size_t j = 0; j < queries.size(); ++j) {
      PairResult pr{si, j, scene.expressions[j].kind, names_heldout(scene.expressions[j], heldout),
                    evaluate_pair(seg.masks[j].binary, scene.gt_mask(j))};
      by_kind[expression_kind_name(pr.kind)].push_back(pr.record);
      out.pairs.push_back(pr);
    }
    bool gt_overlap = false, pred_overlap_on_gt = false, any_pred_overlap = false;
    for (std::size_t a = 0; a < queries.size(); ++a) {
      for (std::size_t b = a + 1; b < queries.size(); ++b) {
        const bool pred = overlaps(seg.masks[a].binary, seg.masks[b].binary);
        any_pred_overlap = any_pred_overlap || pred;
        if (overlaps(scene.gt_mask(a), scene.gt_mask(b))) {
          gt_overlap = true;
          pred_overlap_on_gt = pred_overlap_on_gt || pred;
        }
      }
    }
    out.overlap_scenes += gt_overlap;
    out.overlap_scenes_with_pred_overlap += gt_overlap && pred_overlap_on_gt;
    out.scenes_with_any_pred_overlap += any_pred_overlap;
  }
  out.miou = mean_over(out.pairs);
  for (const auto& [kind, records] : by_kind) out.per_kind[kind] = mean_iou(records);
  if (!heldout.empty()) {
    std::vector<PairResult> seen, unseen;
    for (const auto& p : out.pairs) {
      if (p.kind != ExpressionKind::ColorShape && p.kind != ExpressionKind::SizeColorShape) continue;
      (p.heldout ? unseen : seen).push_back(p);
    }
    if (!seen.empty()) out.seen_miou = mean_over(seen);
    if (!unseen.empty()) out.unseen_miou = mean_over(unseen);
  }
  return out;
}

std::uint64_t eval_data_seed(std::uint64_t seed) { return child_seed(seed, 0xe7a1); }

std::vector<SynthScene> eval_scenes(std::uint64_t seed, std::size_t count, const GeneratorConfig& config) {
  std::vector<SynthScene> out;
  out.reserve(count);
  SceneStream stream(eval_data_seed(seed), config);
  for (std::size_t k = 0; k < count; ++k) out.push_back(stream.at(k));
  return out;
}

SegmentOptions segment_options(const RunConfig& config) {
  SegmentOptions o;
  o.mode = decode_mode_for(config.train);
  o.pooling = config.train.pooling;
  o.cam_beta = config.cam_beta;
  return o;
}

GeneratorConfig eval_generator(const RunConfig& config) {
  if (config.heldout.empty()) return config.train.generator;
  return holdout_split(config.train.generator, config.heldout).eval;
}

std::vector<SynthScene> eval_scenes(const RunConfig& config, std::uint64_t eval_seed) {
  return eval_scenes(eval_seed, config.eval_scenes, eval_generator(config));
}

RunOutcome run_experiment(const RunConfig& config, std::uint64_t eval_seed, const ProgressFn& progress) {
  config.validate();
  TrainConfig tc = config.train;
  tc.generator = config.train_generator();
  TrainResult trained = train(tc, progress);
  const auto scenes = eval_scenes(config, eval_seed);
  EvalSummary summary = evaluate(trained.model, scenes, segment_options(config), config.heldout);
  return RunOutcome{std::move(trained), std::move(summary)};
}

}  // namespace tseg
