#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "tseg/gradcheck.hpp"
#include "tseg/objectives.hpp"
#include "tseg/ops.hpp"
#include "tseg/pooling.hpp"

using namespace tseg;

namespace {

Tensor eval_scores(const Tensor& s, Mechanism m) {
  Graph g;
  PoolingConfig cfg;
  cfg.mechanism = m;
  return image_text_scores(g.constant(s), cfg).z.value();
}

}  // namespace

TEST_CASE("pooling matches loop oracles on random matrices") {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.index(64), l = 1 + rng.index(8);
    const Tensor s = oracle::random_matrix(rng, n, l, 4.0);
    const auto sm = oracle::to_mat(s);
    Graph g;
    Var sv = g.constant(s);
    CHECK(oracle::max_abs_diff(oracle::gap(sm), gap_scores(sv).value().data()) < 1e-12);
    CHECK(oracle::max_abs_diff(oracle::gmp(sm), gmp_scores(sv).value().data()) < 1e-12);
    CHECK(oracle::max_abs_diff(oracle::spa(sm, 0.0), spa_masks(sv, 0.0).value()) < 1e-12);
    CHECK(oracle::max_abs_diff(oracle::mpa(sm, 0.3), mpa_masks(sv, 0.3).value()) < 1e-12);

    const auto m = oracle::mpa(sm, 0.0);
    Var mv = mpa_masks(sv, 0.0);
    CHECK(oracle::max_abs_diff(oracle::gwp(sm, m, 1e-5), gwp_scores(sv, mv, 1e-5).value().data()) < 1e-12);
    CHECK(oracle::max_abs_diff(oracle::size_score(m, 0.01, 5.0), size_scores(mv, 0.01, 5.0).value().data()) < 1e-12);

    std::vector<double> z = oracle::gwp(sm, m, 1e-5);
    const auto zs = oracle::size_score(m, 0.01, 5.0);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += zs[j];
    CHECK(oracle::max_abs_diff(z, eval_scores(s, Mechanism::MPA).data()) < 1e-12);
  }
}

TEST_CASE("size score worked values") {
  Graph g;
  auto at = [&](double mbar) { return size_scores(g.constant(Tensor({1, 1}, std::vector<double>{mbar})), 0.01, 5.0).value()[0]; };
  CHECK(at(1.0) == doctest::Approx(0.0));
  CHECK(at(0.0) == doctest::Approx(std::log(0.01)));
  CHECK(at(0.5) == doctest::Approx(std::pow(0.5, 5) * std::log(0.51)).epsilon(1e-12));
  // Penalty shrinks as coverage grows.
  CHECK(at(0.1) < at(0.3));
}

TEST_CASE("SPA rows sum to one and masks exclude each other") {
  Rng rng(8);
  const Tensor s = oracle::random_matrix(rng, 16, 5);
  Graph g;
  const Tensor m = spa_masks(g.constant(s), 0.0).value();
  CHECK(m.dim(1) == 6);
  for (std::size_t i = 0; i < 16; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 6; ++j) total += m.at(i, j);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("MPA columns ignore other expressions, SPA columns do not") {
  Graph g;
  const Tensor s({2, 2}, std::vector<double>{1.0, 3.0, -1.0, 0.5});
  const Tensor first({2, 1}, std::vector<double>{1.0, -1.0});
  const Tensor mpa_full = mpa_masks(g.constant(s), 0.0).value();
  const Tensor mpa_one = mpa_masks(g.constant(first), 0.0).value();
  CHECK(mpa_full.at(0, 0) == mpa_one.at(0, 0));
  CHECK(mpa_full.at(1, 0) == mpa_one.at(1, 0));
  const Tensor spa_full = spa_masks(g.constant(s), 0.0).value();
  const Tensor spa_one = spa_masks(g.constant(first), 0.0).value();
  CHECK(std::abs(spa_full.at(0, 1) - spa_one.at(0, 1)) > 0.1);
}

TEST_CASE("single-expression SPA equals MPA") {
  Rng rng(9);
  const Tensor s = oracle::random_matrix(rng, 30, 1);
  Graph g;
  const Tensor spa = spa_masks(g.constant(s), 0.0).value();
  const Tensor mpa = mpa_masks(g.constant(s), 0.0).value();
  for (std::size_t i = 0; i < 30; ++i) CHECK(spa.at(i, 1) == doctest::Approx(mpa.at(i, 0)).epsilon(1e-14));
}

TEST_CASE("GWP with unit masks and zero epsilon is GAP") {
  Rng rng(10);
  const Tensor s = oracle::random_matrix(rng, 12, 3);
  Graph g;
  Var sv = g.constant(s);
  const Tensor gwp = gwp_scores(sv, g.constant(Tensor({12, 3}, 1.0)), 0.0).value();
  const Tensor gap = gap_scores(sv).value();
  for (std::size_t j = 0; j < 3; ++j) CHECK(gwp[j] == doctest::Approx(gap[j]).epsilon(1e-14));
}

TEST_CASE("pooling config and argument validation") {
  PoolingConfig c;
  c.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.p = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  Graph g;
  Var s = g.constant(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(gwp_scores(s, g.constant(Tensor({2, 2}, -0.5)), 1e-5), DomainError);
  CHECK_THROWS_AS(gwp_scores(s, g.constant(Tensor({2, 3}, 0.5)), 1e-5), ShapeError);
  CHECK(parse_mechanism("MpA") == Mechanism::MPA);
  CHECK_FALSE(parse_mechanism("cam").has_value());
  CHECK(std::string(mechanism_name(Mechanism::GMP)) == "gmp");
}

TEST_CASE("soft-margin loss matches the closed form") {
  Graph g;
  const Tensor z({3}, std::vector<double>{2.0, -1.0, 0.0});
  const Tensor t({3}, std::vector<double>{1.0, 0.0, 0.3});
  double expect = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    expect += -t[j] * std::log(oracle::logistic(z[j])) - (1 - t[j]) * std::log(oracle::logistic(-z[j]));
  }
  CHECK(soft_margin_loss(g.constant(z), g.constant(t)).value().item() == doctest::Approx(expect).epsilon(1e-14));
  // Saturated scores stay finite.
  CHECK(std::isfinite(
      soft_margin_loss(g.constant(Tensor({1}, -500.0)), g.constant(Tensor({1}, 1.0))).value().item()));
  CHECK_THROWS_AS(soft_margin_loss(g.constant(z), g.constant(Tensor({3}, 1.5))), DomainError);
}

TEST_CASE("dice loss worked values") {
  Graph g;
  auto dice = [&](std::vector<double> m, std::vector<double> t) {
    const std::size_t n = m.size();
    return dice_loss(g.constant(Tensor({n, 1}, std::move(m))), g.constant(Tensor({n, 1}, std::move(t)))).value().item();
  };
  CHECK(dice({1, 1, 0, 0}, {1, 1, 0, 0}) == doctest::Approx(1.0 - 4.0 / (4.0 + 1e-6)));
  CHECK(dice({1, 0, 0, 0}, {0, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(dice({0, 0}, {0, 0}) == doctest::Approx(0.0));
  CHECK(dice({0.5, 0.5}, {1, 0}) == doctest::Approx(1.0 - 1.0 / (2.0 + 1e-6)));
}

TEST_CASE("pooled scores and losses differentiate") {
  Rng rng(13);
  for (Mechanism m : {Mechanism::GAP, Mechanism::GMP, Mechanism::SPA, Mechanism::MPA}) {
    const Tensor s = oracle::random_matrix(rng, 10, 3);
    const Tensor t({3}, std::vector<double>{1, 0, 1});
    GraphBuilder fn = [&](Graph& g, std::span<const Var> in) {
      PoolingConfig cfg;
      cfg.mechanism = m;
      return soft_margin_loss(image_text_scores(in[0], cfg).z, g.constant(t));
    };
    std::vector<Tensor> pt{s};
    CHECK(gradcheck(fn, pt) < 1e-6);
  }
  GraphBuilder dice_fn = [](Graph& g, std::span<const Var> in) {
    return dice_loss(sigmoid(in[0]), g.constant(Tensor({4, 2}, std::vector<double>{1, 0, 1, 1, 0, 0, 0, 1})));
  };
  std::vector<Tensor> pt{oracle::random_matrix(rng, 4, 2)};
  CHECK(gradcheck(dice_fn, pt) < 1e-7);
}

TEST_CASE("dice through a saturated sigmoid sits at a fixed point") {
  const Tensor gt({6, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0});
  Tensor logits = gt;
  for (auto& v : logits.data()) v = v > 0.5 ? 40.0 : -40.0;
  Graph g;
  Var s = g.leaf(logits, true);
  Var loss = dice_loss(sigmoid(s), g.constant(gt));
  CHECK(loss.value().item() < 1e-6);
  g.backward(loss);
  double worst = 0.0;
  for (double v : g.grad(s).data()) worst = std::max(worst, std::abs(v));
  CHECK(worst < 1e-6);
}
