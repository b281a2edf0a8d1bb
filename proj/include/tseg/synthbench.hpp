#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tseg/encoders.hpp"
#include "tseg/image.hpp"
#include "tseg/tensor.hpp"

// Procedural colored-shape scenes with attribute referring expressions and
// exact ground-truth masks.
namespace tseg {

enum class ShapeKind : std::uint8_t { Square, Circle, Triangle };
enum class SizeKind : std::uint8_t { Small, Large };

inline constexpr std::size_t kPaletteSize = 8;
inline constexpr std::size_t kShapeCount = 3;

// Fixed token table: BOS, EOS, colors, sizes, shapes, "thing".
class Vocabulary {
 public:
  static constexpr std::size_t kBos = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kFirstColor = 2;
  static constexpr std::size_t kSmall = kFirstColor + kPaletteSize;
  static constexpr std::size_t kLarge = kSmall + 1;
  static constexpr std::size_t kFirstShape = kLarge + 1;
  static constexpr std::size_t kThing = kFirstShape + kShapeCount;
  static constexpr std::size_t kSize = kThing + 1;

  static std::string_view word(std::size_t id);
  static std::optional<std::size_t> id(std::string_view word);
  // Space-separated words to content ids; throws std::invalid_argument on
  // an unknown word.
  static TokenSeq encode(std::string_view phrase);
  static std::string decode(const TokenSeq& tokens);

  static std::size_t color_token(std::size_t color) { return kFirstColor + color; }
  static std::size_t shape_token(ShapeKind s) { return kFirstShape + static_cast<std::size_t>(s); }
  static std::size_t size_token(SizeKind s) { return s == SizeKind::Small ? kSmall : kLarge; }
};

std::array<double, 3> palette_rgb(std::size_t color);

struct Composition {
  std::size_t color = 0;
  ShapeKind shape = ShapeKind::Square;
  friend bool operator==(const Composition&, const Composition&) = default;
};

struct SceneObject {
  ShapeKind shape = ShapeKind::Square;
  std::size_t color = 0;
  SizeKind size = SizeKind::Small;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  // Pixel-center inside test.
  bool contains(double px, double py) const;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

enum class ExpressionKind : std::uint8_t { Shape, ColorShape, SizeColorShape, ColorThing, SizeThing };
const char* expression_kind_name(ExpressionKind k);

struct Expression {
  TokenSeq tokens;
  ExpressionKind kind = ExpressionKind::Shape;
  std::optional<std::size_t> color;
  std::optional<ShapeKind> shape;
  std::optional<SizeKind> size;

  bool matches(const SceneObject& o) const;
  std::string text() const { return Vocabulary::decode(tokens); }
  friend bool operator==(const Expression&, const Expression&) = default;
};

struct GeneratorConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t min_objects = 2;
  std::size_t max_objects = 5;
  std::size_t palette_size = kPaletteSize;
  double small_radius_min = 5.0;
  double small_radius_max = 7.0;
  double large_radius_min = 10.0;
  double large_radius_max = 13.0;
  // Each object is named by [size color shape] with detail_prob, else by
  // [color shape]. Every color, size and shape present is additionally named
  // by [color thing], [size thing] and [shape] with these probabilities.
  double detail_prob = 0.5;
  double color_thing_prob = 0.5;
  double size_thing_prob = 0.25;
  double shape_prob = 0.25;
  std::vector<Composition> excluded;  // never drawn
  std::vector<Composition> required;  // each scene contains one of these

  bool allows(const Composition& c) const;
  // Throws std::invalid_argument when no scene can satisfy the config.
  void validate() const;
};

// While alive, ground-truth mask reads on this thread throw std::logic_error.
// The weakly-supervised training path runs inside one.
class WeakSupervisionScope {
 public:
  WeakSupervisionScope();
  ~WeakSupervisionScope();
  WeakSupervisionScope(const WeakSupervisionScope&) = delete;
  WeakSupervisionScope& operator=(const WeakSupervisionScope&) = delete;
  static bool active();
};

class SynthScene {
 public:
  std::uint64_t seed = 0;
  Image image;
  std::vector<SceneObject> objects;
  std::vector<Expression> expressions;

  const BinaryMask& gt_mask(std::size_t expression) const;
  std::optional<std::size_t> find(const TokenSeq& tokens) const;

  friend bool operator==(const SynthScene&, const SynthScene&) = default;

 private:
  std::vector<BinaryMask> gt_masks_;

  friend SynthScene generate_scene(std::uint64_t, const GeneratorConfig&);
  friend SynthScene hflip_augment(const SynthScene&, bool);
};

// Deterministic in `seed`: 2-5 non-overlapping objects, every attribute
// phrase of every object, masks as unions of matching objects.
SynthScene generate_scene(std::uint64_t seed, const GeneratorConfig& config);

// Scene `index` of the stream rooted at `seed`.
SynthScene scene_at(std::uint64_t seed, std::uint64_t index, const GeneratorConfig& config);

// Mirrors the image and masks left-right when `coin` is set.
SynthScene hflip_augment(const SynthScene& scene, bool coin);

BinaryMask rasterize(const SceneObject& object, std::size_t height, std::size_t width);

struct BatchSpec {
  std::vector<TokenSeq> pool;                     // L deduplicated expressions
  std::vector<std::vector<std::size_t>> positives;  // sampled pool columns per image
  Tensor labels;                                   // B x L identity pairings
};

// Samples Poisson(mean) positives per image, clamped to [1, available],
// pools them by exact token equality and labels column j of image b with 1
// iff pool[j] is one of image b's expressions.
BatchSpec build_batch(std::span<const SynthScene> scenes, std::uint64_t sampler_seed,
                      double positives_mean = 3.0);

// Cosine similarity of tf-idf word vectors (raw term counts, smooth idf
// ln((1 + n) / (1 + df)) + 1 fitted on `documents`).
Tensor tfidf_similarity(std::span<const TokenSeq> documents);

// labels[b][j] = max over image b's expressions of the tf-idf similarity
// with pool[j], clamped to [0, 1]; idf is fitted on all distinct
// expressions of the batch.
Tensor tfidf_labels(const BatchSpec& batch, std::span<const SynthScene> scenes);

struct HoldoutSplit {
  GeneratorConfig train;
  GeneratorConfig eval;
  std::vector<Composition> heldout;
};

// Held-out (color, shape) pairs never appear in training scenes; every eval
// scene contains one. Throws std::invalid_argument if a color or shape would
// be unseen in training, or the grammar has fewer than two of either.
HoldoutSplit holdout_split(const GeneratorConfig& base, std::vector<Composition> heldout);

// True when the expression names a held-out (color, shape) pair.
bool names_heldout(const Expression& e, std::span<const Composition> heldout);

}  // namespace tseg
