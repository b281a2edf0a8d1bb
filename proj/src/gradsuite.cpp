#include "tseg/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "tseg/encoders.hpp"
#include "tseg/gradcheck.hpp"
#include "tseg/objectives.hpp"
#include "tseg/ops.hpp"
#include "tseg/pooling.hpp"
#include "tseg/rng.hpp"

namespace tseg {
namespace {

using PointFn = std::function<std::vector<Tensor>(Rng&)>;

struct GradCase {
  std::string name;
  GraphBuilder fn;
  PointFn point;
};

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Patch tokens, text tokens, both projections and the log temperature.
PointFn similarity_point(std::size_t n, std::size_t l, std::size_t di, std::size_t dt, std::size_t d) {
  return [=](Rng& rng) {
    return std::vector<Tensor>{random_tensor(rng, {n, di}), random_tensor(rng, {l, dt}), random_tensor(rng, {di, d}),
                               random_tensor(rng, {dt, d}), Tensor::scalar(rng.uniform(-1.0, 0.0))};
  };
}

GraphBuilder scored_pipeline(Mechanism mech, Tensor weights) {
  return [mech, weights](Graph& g, std::span<const Var> in) {
    Var s = similarity_matrix(in[0], in[1], in[2], in[3], in[4]);
    PoolingConfig cfg;
    cfg.mechanism = mech;
    return sum_all(mul(image_text_scores(s, cfg).z, g.constant(weights)));
  };
}

GraphBuilder loss_pipeline(Mechanism mech, Tensor labels) {
  return [mech, labels](Graph& g, std::span<const Var> in) {
    Var s = similarity_matrix(in[0], in[1], in[2], in[3], in[4]);
    PoolingConfig cfg;
    cfg.mechanism = mech;
    return soft_margin_loss(image_text_scores(s, cfg).z, g.constant(labels));
  };
}

std::vector<GradCase> build_cases(Rng& rng) {
  constexpr std::size_t n = 16, l = 4, di = 6, dt = 5, d = 4;
  Tensor weights = random_tensor(rng, {l});
  Tensor labels({l}, std::vector<double>{1.0, 0.0, 1.0, 0.25});
  std::vector<GradCase> cases;
  for (Mechanism m : {Mechanism::GAP, Mechanism::GMP, Mechanism::SPA, Mechanism::MPA}) {
    cases.push_back({std::string("similarity->") + mechanism_name(m) + "->score", scored_pipeline(m, weights),
                     similarity_point(n, l, di, dt, d)});
  }
  for (Mechanism m : {Mechanism::SPA, Mechanism::MPA}) {
    cases.push_back({std::string("similarity->") + mechanism_name(m) + "->soft-margin", loss_pipeline(m, labels),
                     similarity_point(n, l, di, dt, d)});
  }
  cases.push_back({"gwp+size(masks)",
                   [](Graph&, std::span<const Var> in) {
                     return sum_all(add(gwp_scores(in[0], in[1], 1e-5), size_scores(in[1], 0.01, 5.0)));
                   },
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor(r, {n, l}, -3.0, 3.0), random_tensor(r, {n, l}, 0.05, 1.0)};
                   }});
  cases.push_back({"soft-margin",
                   [labels](Graph& g, std::span<const Var> in) { return soft_margin_loss(in[0], g.constant(labels)); },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {l}, -5.0, 5.0)}; }});
  cases.push_back({"dice",
                   [](Graph& g, std::span<const Var> in) {
                     Tensor target({n, l});
                     for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7 + 3) % 5 < 2 ? 1.0 : 0.0;
                     return dice_loss(sigmoid(in[0]), g.constant(std::move(target)));
                   },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {n, l}, -3.0, 3.0)}; }});
  cases.push_back({"upsample->sigmoid->dice",
                   [](Graph& g, std::span<const Var> in) {
                     Var m = sigmoid(upsample_bilinear(in[0], 4, 4, 9, 7));
                     Tensor target({63, 2});
                     for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 5 + 1) % 3 == 0 ? 1.0 : 0.0;
                     return dice_loss(m, g.constant(std::move(target)));
                   },
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {16, 2}, -3.0, 3.0)}; }});

  EncoderConfig enc;
  enc.image_height = enc.image_width = 8;
  enc.patch_size = 4;
  enc.image_dim = enc.text_dim = 8;
  enc.embed_dim = 4;
  enc.layers = 1;
  enc.heads = 2;
  enc.max_text_len = 4;
  const ParamSet shapes = Model::param_shapes(enc);
  std::vector<std::string> names;
  for (const auto& [k, v] : shapes) names.push_back(k);
  Image image(8, 8, 3);
  for (auto& v : image.pixels) v = rng.uniform();
  const std::vector<TokenSeq> texts{{3, 4}, {5}};
  cases.push_back({"encoders->mpa->soft-margin",
                   [enc, names, image, texts](Graph& g, std::span<const Var> in) {
                     std::map<std::string, Var, std::less<>> vars;
                     for (std::size_t k = 0; k < names.size(); ++k) vars.emplace(names[k], in[k]);
                     BoundModel bm(g, enc, std::move(vars));
                     Var s = similarity_matrix(bm, encode_image(bm, image), encode_texts(bm, texts));
                     PoolingConfig cfg;
                     return soft_margin_loss(image_text_scores(s, cfg).z,
                                             g.constant(Tensor({2}, std::vector<double>{1.0, 0.0})));
                   },
                   [enc, names](Rng& r) {
                     const Model model(enc, r.engine()());
                     std::vector<Tensor> out;
                     for (const auto& k : names) {
                       out.push_back(k == "proj.log_temperature" ? Tensor::scalar(r.uniform(-1.0, 0.0))
                                                                 : model.params().at(k));
                     }
                     return out;
                   }});
  return cases;
}

}  // namespace

std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& options) {
  Rng rng(options.seed);
  std::vector<GradCaseResult> out;
  for (const auto& c : build_cases(rng)) {
    GradCaseResult r{c.name, options.points, 0.0, true};
    for (std::size_t k = 0; k < options.points; ++k) {
      const auto point = c.point(rng);
      r.max_rel_error = std::max(r.max_rel_error, gradcheck(c.fn, point, options.step));
    }
    r.passed = r.max_rel_error < options.tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace tseg
