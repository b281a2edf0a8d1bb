#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tseg/synthbench.hpp"
#include "tseg/trainer.hpp"

namespace tseg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything that determines a run. Paths are given on the command line and
// are not part of the configuration.
struct RunConfig {
  TrainConfig train;
  std::vector<Composition> heldout;  // (color, shape) pairs kept out of training
  std::size_t eval_scenes = 200;
  double cam_beta = 0.4;

  // Generator used for training scenes (held-out pairs excluded).
  GeneratorConfig train_generator() const;
  // Throws ConfigError.
  void validate() const;
};

// UTF-8 "key = value" lines; '#' starts a comment. Unknown keys, repeated
// keys and malformed values throw ConfigError naming the line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
void apply_override(RunConfig& config, std::string_view assignment);

// One "key = value" line per key in a fixed order; parse_config of this text
// reproduces the configuration exactly.
std::string canonical_text(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);
// 16 lowercase hex digits of fnv1a64(canonical_text(config)).
std::string config_hash(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace tseg
