#include "tseg/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "tseg/rng.hpp"

namespace tseg {
namespace {

constexpr std::array<std::string_view, Vocabulary::kSize> kWords = {
    "<bos>", "<eos>",   "red",   "green",  "blue",   "yellow",   "cyan", "magenta",
    "white", "orange",  "small", "large",  "square", "circle", "triangle", "thing"};

constexpr std::array<std::array<double, 3>, kPaletteSize> kPalette = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {0.0, 1.0, 1.0},
    {1.0, 0.0, 1.0},
    {1.0, 1.0, 1.0},
    {1.0, 0.5, 0.0},
}};

thread_local int weak_scope_depth = 0;

}  // namespace

std::string_view Vocabulary::word(std::size_t id) {
  if (id >= kSize) throw std::out_of_range("vocabulary id out of range");
  return kWords[id];
}

std::optional<std::size_t> Vocabulary::id(std::string_view w) {
  for (std::size_t i = 0; i < kSize; ++i) {
    if (kWords[i] == w) return i;
  }
  return std::nullopt;
}

TokenSeq Vocabulary::encode(std::string_view phrase) {
  TokenSeq out;
  std::istringstream is{std::string(phrase)};
  std::string w;
  while (is >> w) {
    auto t = id(w);
    if (!t || *t == kBos || *t == kEos) throw std::invalid_argument("unknown word '" + w + "'");
    out.push_back(*t);
  }
  return out;
}

std::string Vocabulary::decode(const TokenSeq& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += word(tokens[i]);
  }
  return s;
}

std::array<double, 3> palette_rgb(std::size_t color) { return kPalette.at(color); }

bool SceneObject::contains(double px, double py) const {
  const double dx = px - cx, dy = py - cy;
  switch (shape) {
    case ShapeKind::Square:
      return std::abs(dx) <= radius && std::abs(dy) <= radius;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= radius * radius;
    case ShapeKind::Triangle:
      // apex up, base on y = cy + r, base half-width r
      return dy >= -radius && dy <= radius && std::abs(dx) <= 0.5 * (dy + radius);
  }
  return false;
}

const char* expression_kind_name(ExpressionKind k) {
  switch (k) {
    case ExpressionKind::Shape: return "shape";
    case ExpressionKind::ColorShape: return "color_shape";
    case ExpressionKind::SizeColorShape: return "size_color_shape";
    case ExpressionKind::ColorThing: return "color_thing";
    case ExpressionKind::SizeThing: return "size_thing";
  }
  return "?";
}

bool Expression::matches(const SceneObject& o) const {
  if (color && *color != o.color) return false;
  if (shape && *shape != o.shape) return false;
  if (size && *size != o.size) return false;
  return true;
}

bool GeneratorConfig::allows(const Composition& c) const {
  return std::find(excluded.begin(), excluded.end(), c) == excluded.end();
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("generator config: " + m); };
  if (palette_size == 0 || palette_size > kPaletteSize) fail("palette_size must be in [1, 8]");
  if (patch_size == 0 || image_size == 0 || image_size % patch_size) fail("image_size must be a multiple of patch_size");
  if (min_objects == 0 || min_objects > max_objects) fail("object count range is empty");
  if (!(small_radius_min > 0.0 && small_radius_min <= small_radius_max && small_radius_max < large_radius_min &&
        large_radius_min <= large_radius_max)) {
    fail("radius ranges must be positive, ordered and disjoint");
  }
  if (2.0 * large_radius_max + 2.0 >= static_cast<double>(image_size)) fail("objects do not fit the image");
  for (double p : {detail_prob, color_thing_prob, size_thing_prob, shape_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("phrase probabilities must lie in [0, 1]");
  }
  bool any = false;
  for (std::size_t c = 0; c < palette_size; ++c)
    for (std::size_t s = 0; s < kShapeCount; ++s) any = any || allows({c, static_cast<ShapeKind>(s)});
  if (!any) fail("every composition is excluded");
  for (const auto& r : required) {
    if (r.color >= palette_size) fail("required composition outside the palette");
    if (!allows(r)) fail("a required composition is also excluded");
  }
}

WeakSupervisionScope::WeakSupervisionScope() { ++weak_scope_depth; }
WeakSupervisionScope::~WeakSupervisionScope() { --weak_scope_depth; }
bool WeakSupervisionScope::active() { return weak_scope_depth > 0; }

const BinaryMask& SynthScene::gt_mask(std::size_t expression) const {
  if (WeakSupervisionScope::active()) {
    throw std::logic_error("ground-truth mask read on the weakly-supervised path");
  }
  return gt_masks_.at(expression);
}

std::optional<std::size_t> SynthScene::find(const TokenSeq& tokens) const {
  for (std::size_t j = 0; j < expressions.size(); ++j) {
    if (expressions[j].tokens == tokens) return j;
  }
  return std::nullopt;
}

BinaryMask rasterize(const SceneObject& object, std::size_t height, std::size_t width) {
  BinaryMask m(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      if (object.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) m.set(y, x);
    }
  return m;
}

namespace {

Expression phrase(const SceneObject& o, ExpressionKind kind) {
  const auto c = Vocabulary::color_token(o.color);
  const auto s = Vocabulary::shape_token(o.shape);
  const auto z = Vocabulary::size_token(o.size);
  switch (kind) {
    case ExpressionKind::Shape: return {{s}, kind, std::nullopt, o.shape, std::nullopt};
    case ExpressionKind::ColorShape: return {{c, s}, kind, o.color, o.shape, std::nullopt};
    case ExpressionKind::SizeColorShape: return {{z, c, s}, kind, o.color, o.shape, o.size};
    case ExpressionKind::ColorThing: return {{c, Vocabulary::kThing}, kind, o.color, std::nullopt, std::nullopt};
    case ExpressionKind::SizeThing: return {{z, Vocabulary::kThing}, kind, std::nullopt, std::nullopt, o.size};
  }
  throw std::logic_error("unknown expression kind");
}

// One identifying phrase per object, then each attribute value present in
// the scene is named on its own with the configured probability.
std::vector<Expression> scene_phrases(const std::vector<SceneObject>& objects, const GeneratorConfig& config,
                                      Rng& rng) {
  std::vector<Expression> out;
  auto add = [&out](Expression e) {
    if (std::none_of(out.begin(), out.end(), [&](const Expression& x) { return x.tokens == e.tokens; })) {
      out.push_back(std::move(e));
    }
  };
  for (const auto& o : objects) {
    add(phrase(o, rng.uniform() < config.detail_prob ? ExpressionKind::SizeColorShape : ExpressionKind::ColorShape));
  }
  const std::pair<ExpressionKind, double> shared[] = {{ExpressionKind::ColorThing, config.color_thing_prob},
                                                      {ExpressionKind::SizeThing, config.size_thing_prob},
                                                      {ExpressionKind::Shape, config.shape_prob}};
  for (const auto& [kind, prob] : shared) {
    std::vector<TokenSeq> seen;
    for (const auto& o : objects) {
      Expression e = phrase(o, kind);
      if (std::find(seen.begin(), seen.end(), e.tokens) != seen.end()) continue;
      seen.push_back(e.tokens);
      if (rng.uniform() < prob) add(std::move(e));
    }
  }
  return out;
}

bool separated(const SceneObject& a, const SceneObject& b) {
  const double gap = a.radius + b.radius + 2.0;
  return std::abs(a.cx - b.cx) >= gap || std::abs(a.cy - b.cy) >= gap;
}

}  // namespace

SynthScene generate_scene(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng(seed);
  const double side = static_cast<double>(config.image_size);
  SynthScene scene;
  scene.seed = seed;
  for (;;) {
    scene.objects.clear();
    const std::size_t target = config.min_objects + rng.index(config.max_objects - config.min_objects + 1);
    for (std::size_t k = 0; k < target; ++k) {
      SceneObject o;
      if (k == 0 && !config.required.empty()) {
        const auto& r = config.required[rng.index(config.required.size())];
        o.color = r.color;
        o.shape = r.shape;
      } else {
        do {
          o.color = rng.index(config.palette_size);
          o.shape = static_cast<ShapeKind>(rng.index(kShapeCount));
        } while (!config.allows({o.color, o.shape}));
      }
      o.size = rng.coin() ? SizeKind::Large : SizeKind::Small;
      o.radius = o.size == SizeKind::Large ? rng.uniform(config.large_radius_min, config.large_radius_max)
                                           : rng.uniform(config.small_radius_min, config.small_radius_max);
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        o.cx = rng.uniform(o.radius + 1.0, side - o.radius - 1.0);
        o.cy = rng.uniform(o.radius + 1.0, side - o.radius - 1.0);
        placed = std::all_of(scene.objects.begin(), scene.objects.end(),
                             [&](const SceneObject& other) { return separated(o, other); });
      }
      if (placed) scene.objects.push_back(o);
    }
    if (scene.objects.size() >= config.min_objects) break;
  }

  const std::size_t n = config.image_size;
  scene.image = Image(n, n, 3, 0.0);
  std::vector<BinaryMask> object_masks;
  for (const auto& o : scene.objects) {
    object_masks.push_back(rasterize(o, n, n));
    const auto rgb = palette_rgb(o.color);
    const auto& m = object_masks.back();
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        if (m.at(y, x)) {
          for (std::size_t c = 0; c < 3; ++c) scene.image.at(y, x, c) = rgb[c];
        }
      }
  }

  scene.expressions = scene_phrases(scene.objects, config, rng);
  for (const auto& e : scene.expressions) {
    BinaryMask m(n, n);
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      if (!e.matches(scene.objects[k])) continue;
      for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] |= object_masks[k].bits[i];
    }
    scene.gt_masks_.push_back(std::move(m));
  }
  return scene;
}

SynthScene scene_at(std::uint64_t seed, std::uint64_t index, const GeneratorConfig& config) {
  return generate_scene(child_seed(seed, index), config);
}

SynthScene hflip_augment(const SynthScene& scene, bool coin) {
  if (!coin) return scene;
  SynthScene out = scene;
  const std::size_t h = scene.image.height, w = scene.image.width, c = scene.image.channels;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out.image.at(y, x, ch) = scene.image.at(y, w - 1 - x, ch);
  for (auto& o : out.objects) o.cx = static_cast<double>(w) - o.cx;
  for (std::size_t j = 0; j < out.gt_masks_.size(); ++j) {
    const auto& src = scene.gt_masks_[j];
    auto& dst = out.gt_masks_[j];
    for (std::size_t y = 0; y < src.height; ++y)
      for (std::size_t x = 0; x < src.width; ++x) dst.set(y, x, src.at(y, src.width - 1 - x));
  }
  return out;
}

BatchSpec build_batch(std::span<const SynthScene> scenes, std::uint64_t sampler_seed, double positives_mean) {
  if (scenes.size() < 2) throw std::invalid_argument("build_batch: need at least two scenes");
  Rng rng(sampler_seed);
  BatchSpec batch;
  batch.positives.resize(scenes.size());
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const auto& exprs = scenes[b].expressions;
    if (exprs.empty()) throw std::invalid_argument("build_batch: scene has no expressions");
    const std::size_t k = std::clamp<std::size_t>(rng.poisson(positives_mean), 1, exprs.size());
    std::vector<std::size_t> order(exprs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.index(order.size() - i)]);
    for (std::size_t i = 0; i < k; ++i) {
      const TokenSeq& t = exprs[order[i]].tokens;
      auto it = std::find(batch.pool.begin(), batch.pool.end(), t);
      std::size_t col = static_cast<std::size_t>(it - batch.pool.begin());
      if (it == batch.pool.end()) batch.pool.push_back(t);
      batch.positives[b].push_back(col);
    }
  }
  batch.labels = Tensor({scenes.size(), batch.pool.size()});
  for (std::size_t b = 0; b < scenes.size(); ++b)
    for (std::size_t j = 0; j < batch.pool.size(); ++j) {
      batch.labels.at(b, j) = scenes[b].find(batch.pool[j]) ? 1.0 : 0.0;
    }
  return batch;
}

Tensor tfidf_similarity(std::span<const TokenSeq> documents) {
  const std::size_t n = documents.size();
  if (n == 0) throw ShapeError("tfidf_similarity: no documents");
  std::map<std::size_t, std::size_t> df;
  for (const auto& d : documents) {
    TokenSeq uniq = d;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto t : uniq) ++df[t];
  }
  std::vector<std::map<std::size_t, double>> vecs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto t : documents[i]) vecs[i][t] += 1.0;
    double norm = 0.0;
    for (auto& [t, v] : vecs[i]) {
      v *= std::log((1.0 + static_cast<double>(n)) / (1.0 + static_cast<double>(df[t]))) + 1.0;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& [t, v] : vecs[i]) v = norm > 0.0 ? v / norm : 0.0;
  }
  Tensor sim({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (const auto& [t, v] : vecs[i]) {
        auto it = vecs[j].find(t);
        if (it != vecs[j].end()) dot += v * it->second;
      }
      sim.at(i, j) = dot;
    }
  return sim;
}

Tensor tfidf_labels(const BatchSpec& batch, std::span<const SynthScene> scenes) {
  std::vector<TokenSeq> docs = batch.pool;
  for (const auto& s : scenes)
    for (const auto& e : s.expressions) {
      if (std::find(docs.begin(), docs.end(), e.tokens) == docs.end()) docs.push_back(e.tokens);
    }
  const Tensor sim = tfidf_similarity(docs);
  auto doc_index = [&](const TokenSeq& t) {
    return static_cast<std::size_t>(std::find(docs.begin(), docs.end(), t) - docs.begin());
  };
  Tensor labels({scenes.size(), batch.pool.size()});
  for (std::size_t b = 0; b < scenes.size(); ++b)
    for (std::size_t j = 0; j < batch.pool.size(); ++j) {
      double best = 0.0;
      for (const auto& e : scenes[b].expressions) best = std::max(best, sim.at(j, doc_index(e.tokens)));
      labels.at(b, j) = std::clamp(best, 0.0, 1.0);
    }
  return labels;
}

HoldoutSplit holdout_split(const GeneratorConfig& base, std::vector<Composition> heldout) {
  if (base.palette_size < 2) throw std::invalid_argument("holdout_split: grammar needs >= 2 colors");
  if (heldout.empty()) throw std::invalid_argument("holdout_split: no held-out compositions");
  HoldoutSplit split{base, base, heldout};
  for (const auto& h : heldout) {
    if (h.color >= base.palette_size) throw std::invalid_argument("holdout_split: color outside palette");
    split.train.excluded.push_back(h);
  }
  for (std::size_t c = 0; c < base.palette_size; ++c) {
    bool seen = false;
    for (std::size_t s = 0; s < kShapeCount; ++s) seen = seen || split.train.allows({c, static_cast<ShapeKind>(s)});
    if (!seen) throw std::invalid_argument("holdout_split: a color would be unseen in training");
  }
  for (std::size_t s = 0; s < kShapeCount; ++s) {
    bool seen = false;
    for (std::size_t c = 0; c < base.palette_size; ++c) seen = seen || split.train.allows({c, static_cast<ShapeKind>(s)});
    if (!seen) throw std::invalid_argument("holdout_split: a shape would be unseen in training");
  }
  split.eval.required = heldout;
  split.train.validate();
  split.eval.validate();
  return split;
}

bool names_heldout(const Expression& e, std::span<const Composition> heldout) {
  if (!e.color || !e.shape) return false;
  return std::find(heldout.begin(), heldout.end(), Composition{*e.color, *e.shape}) != heldout.end();
}

}  // namespace tseg
