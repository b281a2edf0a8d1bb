#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tseg/graph.hpp"
#include "tseg/image.hpp"

namespace tseg {

using TokenSeq = std::vector<std::size_t>;
using ParamSet = std::map<std::string, Tensor>;

struct EncoderConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t image_dim = 64;  // D_I
  std::size_t text_dim = 64;   // D_T
  std::size_t embed_dim = 64;  // shared space D
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t vocab_size = 16;
  std::size_t max_text_len = 8;  // including BOS and EOS
  std::size_t bos_id = 0;
  std::size_t eos_id = 1;
  double init_temperature = 0.07;

  std::size_t grid_h() const { return image_height / patch_size; }
  std::size_t grid_w() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_features() const { return patch_size * patch_size * channels; }

  // Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

// Parameter naming: "image.*", "text.*", "proj.*"; transformer blocks live
// under "<side>.block<k>.*".
class Model {
 public:
  Model(EncoderConfig config, std::uint64_t seed);
  // Adopts existing parameters; throws if any is missing or misshapen.
  Model(EncoderConfig config, ParamSet params);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  double temperature() const;

  static ParamSet param_shapes(const EncoderConfig& config);

 private:
  EncoderConfig config_;
  ParamSet params_;
};

// A Model's parameters bound as leaves of one graph.
class BoundModel {
 public:
  BoundModel(Graph& graph, const Model& model, bool trainable);
  // Uses existing vars of `graph`, one per parameter name of `config`.
  BoundModel(Graph& graph, const EncoderConfig& config, std::map<std::string, Var, std::less<>> vars);

  Var operator[](std::string_view name) const;
  const std::map<std::string, Var, std::less<>>& vars() const noexcept { return vars_; }
  Graph& graph() const noexcept { return *graph_; }
  const EncoderConfig& config() const noexcept { return config_; }

 private:
  Graph* graph_;
  EncoderConfig config_;
  std::map<std::string, Var, std::less<>> vars_;
};

// Rows are patches in row-major grid order, images stacked; each row lists
// the patch pixels row by row, channels interleaved.
Tensor patchify(std::span<const Image> images, std::size_t patch_size);

// Pre-norm transformer over stacked sequences; attention stays within each
// segment. `segments` holds the row count of each sequence.
Var transformer(const BoundModel& m, const std::string& prefix, Var x,
                std::span<const std::size_t> segments);

// Contextualized patch tokens, (B*N) x D_I for B images.
Var encode_images(const BoundModel& m, std::span<const Image> images);
Var encode_image(const BoundModel& m, const Image& image);

// One D_T row per expression: the contextualized BOS output. Content token
// ids only; BOS/EOS are added here.
Var encode_texts(const BoundModel& m, std::span<const TokenSeq> expressions);
Var encode_text(const BoundModel& m, const TokenSeq& tokens);

// Rows of tokens @ projection, each scaled to unit L2 norm. Throws DomainError
// when a projected row has norm < 1e-12.
Var project_normalized(Var tokens, Var projection);

// s_ij = (x_i . y_j) / tau over projected, normalized rows, with
// tau = exp(log_temperature).
Var similarity_matrix(Var patch_tokens, Var text_tokens, Var image_projection,
                      Var text_projection, Var log_temperature);
Var similarity_matrix(const BoundModel& m, Var patch_tokens, Var text_tokens);

}  // namespace tseg
