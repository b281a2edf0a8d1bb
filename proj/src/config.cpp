#include "tseg/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

namespace tseg {

GeneratorConfig RunConfig::train_generator() const {
  if (heldout.empty()) return train.generator;
  return holdout_split(train.generator, heldout).train;
}

void RunConfig::validate() const {
  try {
    train.validate();
    if (!heldout.empty()) holdout_split(train.generator, heldout);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (eval_scenes == 0) throw ConfigError("eval_scenes must be positive");
  if (!(cam_beta > 0.0 && cam_beta < 1.0)) throw ConfigError("cam_beta must lie in (0, 1)");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("'" + s + "' is not a finite number");
  }
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("'" + s + "' is not a non-negative integer");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("'" + s + "' is not true or false");
}

template <class E>
E pick(const std::string& s, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, v] : options) {
    if (s == name) return v;
  }
  std::string names;
  for (const auto& [name, v] : options) names += std::string(names.empty() ? "" : ", ") + name;
  throw ConfigError("'" + s + "' is not one of " + names);
}

std::string heldout_text(const std::vector<Composition>& pairs) {
  std::string out;
  for (const auto& c : pairs) {
    if (!out.empty()) out += ", ";
    out += std::string(Vocabulary::word(Vocabulary::color_token(c.color))) + " " +
           std::string(Vocabulary::word(Vocabulary::shape_token(c.shape)));
  }
  return out;
}

std::vector<Composition> parse_heldout(const std::string& s) {
  std::vector<Composition> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream words(trim(item));
    std::string color, shape, extra;
    words >> color >> shape;
    if (color.empty() || shape.empty() || (words >> extra)) {
      throw ConfigError("held-out entry '" + trim(item) + "' must be '<color> <shape>'");
    }
    const auto c = Vocabulary::id(color), sh = Vocabulary::id(shape);
    if (!c || *c < Vocabulary::kFirstColor || *c >= Vocabulary::kFirstColor + kPaletteSize) {
      throw ConfigError("'" + color + "' is not a color");
    }
    if (!sh || *sh < Vocabulary::kFirstShape || *sh >= Vocabulary::kFirstShape + kShapeCount) {
      throw ConfigError("'" + shape + "' is not a shape");
    }
    out.push_back({*c - Vocabulary::kFirstColor, static_cast<ShapeKind>(*sh - Vocabulary::kFirstShape)});
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define TSEG_DOUBLE(name, member)                                                     \
  Field {                                                                             \
    name, [](const RunConfig& c) { return fmt_double(c.member); },                    \
        [](RunConfig& c, const std::string& v) { c.member = to_double(v); }           \
  }
#define TSEG_UINT(name, member)                                                       \
  Field {                                                                             \
    name, [](const RunConfig& c) { return std::to_string(c.member); },                \
        [](RunConfig& c, const std::string& v) { c.member = to_uint(v); }             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"mode", [](const RunConfig& c) { return std::string(train_mode_name(c.train.mode)); },
       [](RunConfig& c, const std::string& v) {
         c.train.mode = pick<TrainMode>(v, {{"weak", TrainMode::Weak}, {"full", TrainMode::Full}});
       }},
      {"mechanism", [](const RunConfig& c) { return std::string(mechanism_name(c.train.pooling.mechanism)); },
       [](RunConfig& c, const std::string& v) {
         const auto m = parse_mechanism(v);
         if (!m) throw ConfigError("'" + v + "' is not one of gap, gmp, spa, mpa");
         c.train.pooling.mechanism = *m;
       }},
      {"labels", [](const RunConfig& c) { return std::string(label_mode_name(c.train.labels)); },
       [](RunConfig& c, const std::string& v) {
         c.train.labels = pick<LabelMode>(v, {{"identity", LabelMode::Identity}, {"tfidf", LabelMode::TfIdf}});
       }},
      {"optimizer", [](const RunConfig& c) { return std::string(optimizer_name(c.train.optimizer)); },
       [](RunConfig& c, const std::string& v) {
         c.train.optimizer = pick<OptimizerKind>(v, {{"sgd", OptimizerKind::Sgd}, {"adamw", OptimizerKind::AdamW}});
       }},
      TSEG_DOUBLE("base_lr", train.base_lr),
      TSEG_UINT("total_iters", train.total_iters),
      TSEG_UINT("batch_size", train.batch_size),
      TSEG_DOUBLE("weight_decay", train.weight_decay),
      TSEG_DOUBLE("momentum", train.momentum),
      TSEG_DOUBLE("positives_mean", train.positives_mean),
      {"hflip", [](const RunConfig& c) { return std::string(c.train.hflip ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.hflip = to_bool(v); }},
      TSEG_UINT("seed", train.seed),
      TSEG_DOUBLE("lambda", train.pooling.lambda),
      TSEG_DOUBLE("p", train.pooling.p),
      TSEG_DOUBLE("epsilon", train.pooling.epsilon),
      TSEG_DOUBLE("s_bg", train.pooling.s_bg),
      TSEG_DOUBLE("cam_beta", cam_beta),
      TSEG_UINT("eval_scenes", eval_scenes),
      {"heldout", [](const RunConfig& c) { return heldout_text(c.heldout); },
       [](RunConfig& c, const std::string& v) { c.heldout = parse_heldout(v); }},
      TSEG_UINT("image_size", train.generator.image_size),
      TSEG_UINT("patch_size", train.generator.patch_size),
      TSEG_UINT("min_objects", train.generator.min_objects),
      TSEG_UINT("max_objects", train.generator.max_objects),
      TSEG_UINT("palette_size", train.generator.palette_size),
      TSEG_DOUBLE("small_radius_min", train.generator.small_radius_min),
      TSEG_DOUBLE("small_radius_max", train.generator.small_radius_max),
      TSEG_DOUBLE("large_radius_min", train.generator.large_radius_min),
      TSEG_DOUBLE("large_radius_max", train.generator.large_radius_max),
      TSEG_DOUBLE("detail_prob", train.generator.detail_prob),
      TSEG_DOUBLE("color_thing_prob", train.generator.color_thing_prob),
      TSEG_DOUBLE("size_thing_prob", train.generator.size_thing_prob),
      TSEG_DOUBLE("shape_prob", train.generator.shape_prob),
      TSEG_UINT("image_dim", train.encoder.image_dim),
      TSEG_UINT("text_dim", train.encoder.text_dim),
      TSEG_UINT("embed_dim", train.encoder.embed_dim),
      TSEG_UINT("layers", train.encoder.layers),
      TSEG_UINT("heads", train.encoder.heads),
      TSEG_UINT("mlp_ratio", train.encoder.mlp_ratio),
      TSEG_DOUBLE("init_temperature", train.encoder.init_temperature),
  };
  return table;
}

#undef TSEG_DOUBLE
#undef TSEG_UINT

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown key '" + key + "'");
}

// Encoder geometry follows the generator so the two cannot disagree.
void sync_geometry(RunConfig& c) {
  c.train.encoder.image_height = c.train.encoder.image_width = c.train.generator.image_size;
  c.train.encoder.patch_size = c.train.generator.patch_size;
}

void assign(RunConfig& c, std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  try {
    field(key).set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + (key.empty() ? "missing key" : key + ": " + e.what()));
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    const std::string key = trim(line.substr(0, eq == std::string_view::npos ? 0 : eq));
    if (!key.empty() && !seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    assign(base, line, where);
  }
  sync_geometry(base);
  return base;
}

void apply_override(RunConfig& config, std::string_view assignment) {
  assign(config, assignment, "override '" + std::string(assignment) + "': ");
  sync_geometry(config);
}

std::string canonical_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_text(config))));
  return buf;
}

}  // namespace tseg
