#pragma once

#include "tseg/config.hpp"
#include "tseg/trainer.hpp"

namespace fixture {

// 32x32 scenes, 4x4 patch grid, one narrow transformer layer per side.
inline tseg::TrainConfig tiny_train(tseg::TrainMode mode = tseg::TrainMode::Weak) {
  tseg::TrainConfig c;
  c.mode = mode;
  c.total_iters = 3;
  c.batch_size = 4;
  c.generator.image_size = 32;
  c.generator.patch_size = 8;
  c.generator.max_objects = 3;
  c.generator.small_radius_min = 3.0;
  c.generator.small_radius_max = 4.0;
  c.generator.large_radius_min = 5.0;
  c.generator.large_radius_max = 7.0;
  c.encoder.image_height = 32;
  c.encoder.image_width = 32;
  c.encoder.patch_size = 8;
  c.encoder.image_dim = 16;
  c.encoder.text_dim = 16;
  c.encoder.embed_dim = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  return c;
}

inline tseg::RunConfig tiny_run(tseg::TrainMode mode = tseg::TrainMode::Weak) {
  tseg::RunConfig r;
  r.train = tiny_train(mode);
  r.eval_scenes = 6;
  return r;
}

}  // namespace fixture
