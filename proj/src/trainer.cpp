#include "tseg/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "tseg/objectives.hpp"
#include "tseg/ops.hpp"
#include "tseg/optim.hpp"
#include "tseg/rng.hpp"

namespace tseg {

const char* train_mode_name(TrainMode m) { return m == TrainMode::Weak ? "weak" : "full"; }
const char* label_mode_name(LabelMode m) { return m == LabelMode::Identity ? "identity" : "tfidf"; }
const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: base_lr must be positive");
  if (total_iters < 1) throw std::invalid_argument("train: total_iters must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must lie in [0, 1)");
  if (!(positives_mean > 0.0)) throw std::invalid_argument("train: positives_mean must be positive");
  pooling.validate();
  generator.validate();
  encoder.validate();
  if (generator.image_size != encoder.image_height || generator.image_size != encoder.image_width ||
      generator.patch_size != encoder.patch_size) {
    throw std::invalid_argument("train: generator and encoder disagree on image or patch size");
  }
  if (encoder.vocab_size != Vocabulary::kSize || encoder.bos_id != Vocabulary::kBos ||
      encoder.eos_id != Vocabulary::kEos) {
    throw std::invalid_argument("train: encoder vocabulary does not match the scene grammar");
  }
}

std::uint64_t init_seed(std::uint64_t seed) { return child_seed(seed, 0x1417); }
std::uint64_t train_data_seed(std::uint64_t seed) { return child_seed(seed, 0x7a11); }

namespace {

constexpr std::uint64_t kAugmentStream = 0xa06;
constexpr std::uint64_t kSamplerStream = 0x5a3;

std::vector<SynthScene> batch_scenes(const TrainConfig& cfg, const SceneStream& data, std::uint64_t n) {
  std::vector<SynthScene> scenes;
  scenes.reserve(cfg.batch_size);
  const std::uint64_t aug = child_seed(cfg.seed, kAugmentStream);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const std::uint64_t index = n * cfg.batch_size + b;
    SynthScene s = data.at(index);
    if (cfg.hflip) s = hflip_augment(s, (child_seed(aug, index) & 1ULL) != 0);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<Image> images_of(const std::vector<SynthScene>& scenes) {
  std::vector<Image> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.image);
  return out;
}

GradMap collect_grads(const Graph& g, const BoundModel& bm) {
  GradMap grads;
  for (const auto& [name, v] : bm.vars()) grads.emplace(name, g.grad(v));
  return grads;
}

class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg), kind_(cfg.optimizer) {}
  void step(ParamSet& params, const GradMap& grads, std::uint64_t n) {
    const double lr = poly_lr(cfg_.base_lr, n, cfg_.total_iters);
    if (kind_ == OptimizerKind::Sgd) {
      sgd_momentum_step(params, grads, momentum_, lr, cfg_.momentum, cfg_.weight_decay);
    } else {
      adamw_step(params, grads, adam_, lr, 0.9, 0.999, 1e-8, cfg_.weight_decay);
    }
  }

 private:
  const TrainConfig& cfg_;
  OptimizerKind kind_;
  MomentumState momentum_;
  AdamWState adam_;
};

void check_loss(double loss, std::uint64_t n) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("training diverged: non-finite loss at iteration " + std::to_string(n));
  }
}

}  // namespace

TrainResult train_weak(const TrainConfig& cfg, const SceneStream& data, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.mode != TrainMode::Weak) throw std::invalid_argument("train_weak: config mode is not weak");
  WeakSupervisionScope firewall;
  TrainResult result{Model(cfg.encoder, init_seed(cfg.seed)), 0, {}};
  const std::size_t n_patch = cfg.encoder.num_patches();
  const std::uint64_t sampler = child_seed(cfg.seed, kSamplerStream);
  Optimizer opt(cfg);
  for (std::uint64_t n = 0; n < cfg.total_iters; ++n) {
    const auto scenes = batch_scenes(cfg, data, n);
    const BatchSpec batch = build_batch(scenes, child_seed(sampler, n), cfg.positives_mean);
    const Tensor labels = cfg.labels == LabelMode::Identity ? batch.labels : tfidf_labels(batch, scenes);

    Graph g;
    BoundModel bm(g, result.model, true);
    const auto images = images_of(scenes);
    Var x = encode_images(bm, images);
    Var y = encode_texts(bm, batch.pool);
    Var s_all = similarity_matrix(bm, x, y);
    const std::size_t l = batch.pool.size();
    std::vector<Var> losses;
    losses.reserve(scenes.size());
    for (std::size_t b = 0; b < scenes.size(); ++b) {
      Var s = slice(s_all, 0, b * n_patch, (b + 1) * n_patch);
      Var z = image_text_scores(s, cfg.pooling).z;
      Tensor row({l});
      for (std::size_t j = 0; j < l; ++j) row[j] = labels.at(b, j);
      losses.push_back(soft_margin_loss(z, g.constant(std::move(row))));
    }
    Var loss = scale(sum_all(concat(losses, 0)), 1.0 / static_cast<double>(scenes.size()));
    const double value = loss.value().item();
    check_loss(value, n);
    g.backward(loss);
    opt.step(result.model.params(), collect_grads(g, bm), n);
    result.loss_history.push_back(value);
    result.iterations = n + 1;
    if (progress) progress(n, value);
  }
  return result;
}

TrainResult train_full(const TrainConfig& cfg, const SceneStream& data, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.mode != TrainMode::Full) throw std::invalid_argument("train_full: config mode is not full");
  TrainResult result{Model(cfg.encoder, init_seed(cfg.seed)), 0, {}};
  Optimizer opt(cfg);
  const EncoderConfig& enc = cfg.encoder;
  const std::size_t n_patch = enc.num_patches();
  const std::size_t hw = enc.image_height * enc.image_width;
  const std::uint64_t sampler = child_seed(cfg.seed, kSamplerStream);
  for (std::uint64_t n = 0; n < cfg.total_iters; ++n) {
    const auto scenes = batch_scenes(cfg, data, n);
    const BatchSpec batch = build_batch(scenes, child_seed(sampler, n), cfg.positives_mean);

    Graph g;
    BoundModel bm(g, result.model, true);
    const auto images = images_of(scenes);
    Var xs = project_normalized(encode_images(bm, images), bm["proj.image"]);
    Var ys = project_normalized(encode_texts(bm, batch.pool), bm["proj.text"]);
    Var inv_tau = exp(neg(bm["proj.log_temperature"]));
    std::vector<Var> losses;
    for (std::size_t b = 0; b < scenes.size(); ++b) {
      const auto& cols = batch.positives[b];
      Var yb = embedding(ys, cols);
      Var s = mul(matmul(slice(xs, 0, b * n_patch, (b + 1) * n_patch), transpose(yb)), inv_tau);
      Var m = sigmoid(upsample_bilinear(s, enc.grid_h(), enc.grid_w(), enc.image_height, enc.image_width));
      Tensor target({hw, cols.size()});
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto j = scenes[b].find(batch.pool[cols[k]]);
        const BinaryMask& gt = scenes[b].gt_mask(*j);
        for (std::size_t p = 0; p < hw; ++p) target[p * cols.size() + k] = gt.bits[p] ? 1.0 : 0.0;
      }
      losses.push_back(dice_loss(m, g.constant(std::move(target))));
    }
    Var loss = scale(sum_all(concat(losses, 0)), 1.0 / static_cast<double>(scenes.size()));
    const double value = loss.value().item();
    check_loss(value, n);
    g.backward(loss);
    opt.step(result.model.params(), collect_grads(g, bm), n);
    result.loss_history.push_back(value);
    result.iterations = n + 1;
    if (progress) progress(n, value);
  }
  return result;
}

TrainResult train(const TrainConfig& config, const ProgressFn& progress) {
  SceneStream data(train_data_seed(config.seed), config.generator);
  return config.mode == TrainMode::Weak ? train_weak(config, data, progress) : train_full(config, data, progress);
}

Checkpoint make_checkpoint(const TrainResult& result, std::string config_text) {
  return Checkpoint{result.model.params(), result.iterations, std::move(config_text)};
}

}  // namespace tseg
