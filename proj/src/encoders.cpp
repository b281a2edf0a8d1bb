#include "tseg/encoders.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tseg/ops.hpp"
#include "tseg/rng.hpp"

namespace tseg {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("encoder config: " + msg); };
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_height % patch_size || image_width % patch_size || image_height == 0 || image_width == 0) {
    fail("image size must be a positive multiple of patch_size");
  }
  if (channels == 0 || image_dim == 0 || text_dim == 0 || embed_dim == 0) fail("dimensions must be positive");
  if (heads == 0 || image_dim % heads || text_dim % heads) fail("dims must be divisible by heads");
  if (layers == 0 || mlp_ratio == 0) fail("layers and mlp_ratio must be positive");
  if (bos_id >= vocab_size || eos_id >= vocab_size || bos_id == eos_id) fail("BOS/EOS ids must be valid and distinct");
  if (max_text_len < 3) fail("max_text_len must allow BOS, one word and EOS");
  if (!(init_temperature > 0.0)) fail("init_temperature must be positive");
}

namespace {

void add_block_shapes(ParamSet& p, const std::string& pre, std::size_t d, std::size_t hidden) {
  p[pre + ".ln1.g"] = Tensor({d});
  p[pre + ".ln1.b"] = Tensor({d});
  p[pre + ".qkv.w"] = Tensor({d, 3 * d});
  p[pre + ".qkv.b"] = Tensor({3 * d});
  p[pre + ".out.w"] = Tensor({d, d});
  p[pre + ".out.b"] = Tensor({d});
  p[pre + ".ln2.g"] = Tensor({d});
  p[pre + ".ln2.b"] = Tensor({d});
  p[pre + ".fc1.w"] = Tensor({d, hidden});
  p[pre + ".fc1.b"] = Tensor({hidden});
  p[pre + ".fc2.w"] = Tensor({hidden, d});
  p[pre + ".fc2.b"] = Tensor({d});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Var linear(const BoundModel& m, const std::string& pre, Var x) {
  return add(matmul(x, m[pre + ".w"]), m[pre + ".b"]);
}

Var attention(const BoundModel& m, const std::string& pre, Var x, std::span<const std::size_t> segments) {
  Var qkv = linear(m, pre + ".qkv", x);
  return linear(m, pre + ".out", segment_attention(qkv, m.config().heads, segments));
}

Var block(const BoundModel& m, const std::string& pre, Var x, std::span<const std::size_t> segments) {
  Var h = layer_norm(x, m[pre + ".ln1.g"], m[pre + ".ln1.b"]);
  x = add(x, attention(m, pre, h, segments));
  Var h2 = layer_norm(x, m[pre + ".ln2.g"], m[pre + ".ln2.b"]);
  Var mlp = linear(m, pre + ".fc2", gelu(linear(m, pre + ".fc1", h2)));
  return add(x, mlp);
}

}  // namespace

ParamSet Model::param_shapes(const EncoderConfig& c) {
  ParamSet p;
  const std::size_t n = c.num_patches();
  p["image.patch.w"] = Tensor({c.patch_features(), c.image_dim});
  p["image.patch.b"] = Tensor({c.image_dim});
  p["image.pos"] = Tensor({n, c.image_dim});
  for (std::size_t k = 0; k < c.layers; ++k) {
    add_block_shapes(p, "image.block" + std::to_string(k), c.image_dim, c.mlp_ratio * c.image_dim);
    add_block_shapes(p, "text.block" + std::to_string(k), c.text_dim, c.mlp_ratio * c.text_dim);
  }
  p["image.ln_f.g"] = Tensor({c.image_dim});
  p["image.ln_f.b"] = Tensor({c.image_dim});
  p["text.tok"] = Tensor({c.vocab_size, c.text_dim});
  p["text.pos"] = Tensor({c.max_text_len, c.text_dim});
  p["text.ln_f.g"] = Tensor({c.text_dim});
  p["text.ln_f.b"] = Tensor({c.text_dim});
  p["proj.image"] = Tensor({c.image_dim, c.embed_dim});
  p["proj.text"] = Tensor({c.text_dim, c.embed_dim});
  p["proj.log_temperature"] = Tensor({1});
  return p;
}

Model::Model(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  params_ = param_shapes(config_);
  Rng rng(seed);
  for (auto& [name, t] : params_) {
    if (ends_with(name, ".g")) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    } else if (ends_with(name, ".b")) {
      // zero
    } else if (name == "proj.log_temperature") {
      t[0] = std::log(config_.init_temperature);
    } else {
      double stddev = 0.0;
      if (name == "image.pos" || name == "text.pos") {
        stddev = 0.1;
      } else if (name == "text.tok") {
        stddev = 1.0;
      } else {
        stddev = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
      }
      for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    }
  }
}

Model::Model(EncoderConfig config, ParamSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const auto& [name, t] : param_shapes(config_)) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(t.shape()));
    }
  }
}

double Model::temperature() const { return std::exp(params_.at("proj.log_temperature")[0]); }

BoundModel::BoundModel(Graph& graph, const Model& model, bool trainable)
    : graph_(&graph), config_(model.config()) {
  for (const auto& [name, t] : model.params()) vars_.emplace(name, graph.leaf(t, trainable));
}

BoundModel::BoundModel(Graph& graph, const EncoderConfig& config, std::map<std::string, Var, std::less<>> vars)
    : graph_(&graph), config_(config), vars_(std::move(vars)) {
  const ParamSet shapes = Model::param_shapes(config);
  if (vars_.size() != shapes.size()) throw std::invalid_argument("BoundModel: parameter count mismatch");
  for (const auto& [name, t] : shapes) {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::invalid_argument("BoundModel: missing parameter '" + name + "'");
    if (&it->second.graph() != &graph) throw std::invalid_argument("BoundModel: '" + name + "' lives in another graph");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("BoundModel: '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(t.shape()));
    }
  }
}

Var BoundModel::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor patchify(std::span<const Image> images, std::size_t p) {
  if (images.empty()) throw ShapeError("patchify: no images");
  const Image& first = images[0];
  if (p == 0 || first.height % p || first.width % p) {
    throw ShapeError("patchify: image " + std::to_string(first.height) + "x" + std::to_string(first.width) +
                     " is not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = first.height / p, gw = first.width / p, c = first.channels;
  const std::size_t feat = p * p * c, n = gh * gw;
  Tensor out({images.size() * n, feat});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = images[b];
    if (img.height != first.height || img.width != first.width || img.channels != c) {
      throw ShapeError("patchify: images differ in size");
    }
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        double* row = &out.data()[(b * n + gy * gw + gx) * feat];
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) *row++ = img.at(gy * p + y, gx * p + x, ch);
      }
  }
  return out;
}

Var transformer(const BoundModel& m, const std::string& prefix, Var x, std::span<const std::size_t> segments) {
  for (std::size_t k = 0; k < m.config().layers; ++k) {
    x = block(m, prefix + ".block" + std::to_string(k), x, segments);
  }
  return layer_norm(x, m[prefix + ".ln_f.g"], m[prefix + ".ln_f.b"]);
}

Var encode_images(const BoundModel& m, std::span<const Image> images) {
  const EncoderConfig& c = m.config();
  for (const Image& img : images) {
    if (img.height % c.patch_size || img.width % c.patch_size) {
      throw ShapeError("encode_image: image size not divisible by patch size");
    }
    if (img.height != c.image_height || img.width != c.image_width || img.channels != c.channels) {
      throw ShapeError("encode_image: image does not match configured input size");
    }
  }
  Graph& g = m.graph();
  const std::size_t n = c.num_patches();
  Var patches = g.constant(patchify(images, c.patch_size));
  std::vector<std::size_t> pos_ids(images.size() * n);
  for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = i % n;
  Var x = add(linear(m, "image.patch", patches), embedding(m["image.pos"], pos_ids));
  std::vector<std::size_t> segments(images.size(), n);
  return transformer(m, "image", x, segments);
}

Var encode_image(const BoundModel& m, const Image& image) {
  return encode_images(m, std::span<const Image>(&image, 1));
}

Var encode_texts(const BoundModel& m, std::span<const TokenSeq> expressions) {
  const EncoderConfig& c = m.config();
  if (expressions.empty()) throw ShapeError("encode_text: no expressions");
  std::vector<std::size_t> ids, pos, segments, bos_rows;
  for (const TokenSeq& seq : expressions) {
    if (seq.empty()) throw std::invalid_argument("encode_text: empty token sequence");
    if (seq.size() + 2 > c.max_text_len) throw std::invalid_argument("encode_text: sequence too long");
    bos_rows.push_back(ids.size());
    ids.push_back(c.bos_id);
    for (std::size_t t : seq) {
      if (t >= c.vocab_size) throw std::out_of_range("encode_text: unknown token id " + std::to_string(t));
      ids.push_back(t);
    }
    ids.push_back(c.eos_id);
    for (std::size_t k = 0; k < seq.size() + 2; ++k) pos.push_back(k);
    segments.push_back(seq.size() + 2);
  }
  Var x = add(embedding(m["text.tok"], ids), embedding(m["text.pos"], pos));
  Var out = transformer(m, "text", x, segments);
  return embedding(out, bos_rows);
}

Var encode_text(const BoundModel& m, const TokenSeq& tokens) {
  return encode_texts(m, std::span<const TokenSeq>(&tokens, 1));
}

Var project_normalized(Var tokens, Var projection) {
  Var p = matmul(tokens, projection);
  Var sq = sum(mul(p, p), 1, true);
  for (double v : sq.value().data()) {
    if (!(v >= 1e-24)) throw DomainError("similarity: projected token has norm < 1e-12");
  }
  return mul(p, pow(sq, -0.5));
}

Var similarity_matrix(Var patch_tokens, Var text_tokens, Var image_projection, Var text_projection,
                      Var log_temperature) {
  Var xs = project_normalized(patch_tokens, image_projection);
  Var ys = project_normalized(text_tokens, text_projection);
  Var cos = matmul(xs, transpose(ys));
  return mul(cos, exp(neg(log_temperature)));
}

Var similarity_matrix(const BoundModel& m, Var patch_tokens, Var text_tokens) {
  return similarity_matrix(patch_tokens, text_tokens, m["proj.image"], m["proj.text"], m["proj.log_temperature"]);
}

}  // namespace tseg
