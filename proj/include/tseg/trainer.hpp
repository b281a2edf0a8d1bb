#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tseg/checkpoint.hpp"
#include "tseg/encoders.hpp"
#include "tseg/pooling.hpp"
#include "tseg/synthbench.hpp"

namespace tseg {

enum class TrainMode { Weak, Full };
enum class LabelMode { Identity, TfIdf };
enum class OptimizerKind { Sgd, AdamW };

const char* train_mode_name(TrainMode m);
const char* label_mode_name(LabelMode m);
const char* optimizer_name(OptimizerKind k);

struct TrainConfig {
  TrainMode mode = TrainMode::Weak;
  PoolingConfig pooling;
  LabelMode labels = LabelMode::Identity;
  double base_lr = 2e-3;
  std::uint64_t total_iters = 2000;
  std::size_t batch_size = 16;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double momentum = 0.9;  // SGD only
  double positives_mean = 3.0;
  bool hflip = true;
  std::uint64_t seed = 1;
  GeneratorConfig generator;
  EncoderConfig encoder;

  // Throws std::invalid_argument.
  void validate() const;
};

// Deterministic scene source: scene k is generated from child_seed(seed, k).
class SceneStream {
 public:
  SceneStream(std::uint64_t seed, GeneratorConfig config) : seed_(seed), config_(std::move(config)) {}
  SynthScene at(std::uint64_t index) const { return scene_at(seed_, index, config_); }
  const GeneratorConfig& config() const noexcept { return config_; }

 private:
  std::uint64_t seed_;
  GeneratorConfig config_;
};

struct TrainResult {
  Model model;
  std::uint64_t iterations = 0;
  std::vector<double> loss_history;
};

using ProgressFn = std::function<void(std::uint64_t iteration, double loss)>;

// Derived seeds so that runs sharing `seed` share initialization and data.
std::uint64_t init_seed(std::uint64_t seed);
std::uint64_t train_data_seed(std::uint64_t seed);

// Weak supervision: image-level pairings only, soft-margin loss, poly decay.
// Runs inside a WeakSupervisionScope. Throws std::runtime_error if the loss
// becomes non-finite.
TrainResult train_weak(const TrainConfig& config, const SceneStream& data, const ProgressFn& progress = {});

// Full supervision: positives only, Dice on sigmoid of upsampled
// similarities, poly decay.
TrainResult train_full(const TrainConfig& config, const SceneStream& data, const ProgressFn& progress = {});

// Dispatches on config.mode with the default training stream.
TrainResult train(const TrainConfig& config, const ProgressFn& progress = {});

Checkpoint make_checkpoint(const TrainResult& result, std::string config_text);

}  // namespace tseg
