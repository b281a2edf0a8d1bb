#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "tseg/gradcheck.hpp"
#include "tseg/ops.hpp"

using namespace tseg;

namespace {

// Projects an arbitrary-shaped output onto a fixed random direction so every
// op can be checked through a scalar.
Var contract(Graph& g, Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w(y.shape());
  for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, g.constant(w)));
}

double check_unary(Var (*op)(Var), Tensor x) {
  GraphBuilder fn = [op](Graph& g, std::span<const Var> in) { return contract(g, op(in[0])); };
  std::vector<Tensor> pt{std::move(x)};
  return gradcheck(fn, pt);
}

}  // namespace

TEST_CASE("tensor construction rejects bad shapes") {
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}).item(), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK(shape_str(t.shape()) == "[2x3]");
}

TEST_CASE("graph rejects non-finite values and non-scalar seeds") {
  Graph g;
  CHECK_THROWS_AS(g.leaf(Tensor({1}, std::vector<double>{NAN})), NonFiniteError);
  Var x = g.leaf(Tensor({2}, std::vector<double>{1.0, 2.0}), true);
  CHECK_THROWS_AS(g.backward(x), ShapeError);
  CHECK_THROWS_AS(log(g.constant(Tensor({1}, std::vector<double>{0.0}))), DomainError);
  CHECK_THROWS_AS(pow(g.constant(Tensor({1}, std::vector<double>{-1.0})), 0.5), DomainError);
  CHECK_THROWS_AS(exp(g.constant(Tensor({1}, std::vector<double>{1000.0}))), NonFiniteError);
}

TEST_CASE("matmul matches the triple loop") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.index(9), k = 1 + rng.index(9), n = 1 + rng.index(9);
    Tensor a = oracle::random_matrix(rng, m, k), b = oracle::random_matrix(rng, k, n);
    Graph g;
    Tensor c = matmul(g.constant(a), g.constant(b)).value();
    CHECK(oracle::max_abs_diff(oracle::matmul(oracle::to_mat(a), oracle::to_mat(b)), c) < 1e-12);
  }
  Graph g;
  CHECK_THROWS_AS(matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("broadcasting follows numpy rules") {
  CHECK(broadcast_shape({3, 1}, {1, 4}) == Shape{3, 4});
  CHECK(broadcast_shape({4}, {2, 4}) == Shape{2, 4});
  CHECK_THROWS_AS(broadcast_shape({3}, {4}), ShapeError);
  Graph g;
  Var a = g.constant(Tensor({2, 1}, std::vector<double>{1, 2}));
  Var b = g.constant(Tensor({3}, std::vector<double>{10, 20, 30}));
  CHECK(add(a, b).value().vec() == std::vector<double>{11, 21, 31, 12, 22, 32});
}

TEST_CASE("reductions and softmax") {
  Graph g;
  Var x = g.constant(Tensor({2, 3}, std::vector<double>{1, 5, 3, 4, 2, 6}));
  CHECK(sum(x, 0).value().vec() == std::vector<double>{5, 7, 9});
  CHECK(sum(x, 1, true).value().shape() == Shape{2, 1});
  CHECK(max(x, 1).value().vec() == std::vector<double>{5, 6});
  CHECK(mean(x, 1).value().vec() == std::vector<double>{3, 4});
  Tensor s = softmax(x, 1).value();
  for (std::size_t r = 0; r < 2; ++r) CHECK(s.at(r, 0) + s.at(r, 1) + s.at(r, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.at(0, 1) == doctest::Approx(std::exp(5.0) / (std::exp(1.0) + std::exp(5.0) + std::exp(3.0))));
  // Large logits stay finite.
  Tensor big = softmax(g.constant(Tensor({1, 2}, std::vector<double>{1000, 1000})), 1).value();
  CHECK(big.at(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("max routes the gradient to the first maximal entry") {
  Graph g;
  Var x = g.leaf(Tensor({3, 1}, std::vector<double>{2, 7, 7}), true);
  g.backward(sum_all(max(x, 0)));
  CHECK(g.grad(x).vec() == std::vector<double>{0, 1, 0});
}

TEST_CASE("log_sigmoid is stable in both tails") {
  Graph g;
  Tensor v = log_sigmoid(g.constant(Tensor({3}, std::vector<double>{-800, 0, 800}))).value();
  CHECK(v[0] == doctest::Approx(-800));
  CHECK(v[1] == doctest::Approx(std::log(0.5)));
  CHECK(v[2] == 0.0);
}

TEST_CASE("unary op gradients") {
  Rng rng(11);
  auto pt = [&] { return oracle::random_matrix(rng, 3, 4, 2.0); };
  CHECK(check_unary(&exp, pt()) < 1e-7);
  CHECK(check_unary(&neg, pt()) < 1e-7);
  CHECK(check_unary(&sigmoid, pt()) < 1e-7);
  CHECK(check_unary(&log_sigmoid, pt()) < 1e-7);
  CHECK(check_unary(&gelu, pt()) < 1e-7);
  CHECK(check_unary(&transpose, pt()) < 1e-7);
  CHECK(check_unary(&sum_all, pt()) < 1e-7);
  Tensor positive = pt();
  for (auto& v : positive.data()) v = std::abs(v) + 0.5;
  CHECK(check_unary(&log, positive) < 1e-7);
  // relu away from the kink
  Tensor away = pt();
  for (auto& v : away.data()) v += v > 0 ? 0.1 : -0.1;
  CHECK(check_unary(&relu, away) < 1e-7);
}

TEST_CASE("structured op gradients") {
  Rng rng(12);
  auto check = [](GraphBuilder fn, std::vector<Tensor> pt) { return gradcheck(fn, pt); };
  Tensor a = oracle::random_matrix(rng, 3, 4), b = oracle::random_matrix(rng, 4, 2), row = oracle::random_matrix(rng, 1, 4);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, matmul(in[0], in[1])); }, {a, b}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, div(in[0], add_scalar(mul(in[1], in[1]), 1.0))); },
              {a, row}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, sub(in[0], scale(in[1], 3.0))); }, {a, row}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, softmax(in[0], 1)); }, {a}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, softmax(in[0], 0)); }, {a}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, mean(in[0], 0, true)); }, {a}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, pow(add_scalar(mul(in[0], in[0]), 1.0), -0.5)); },
              {a}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, reshape(in[0], {2, 6})); }, {a}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, broadcast_to(in[0], {3, 4})); }, {row}) < 1e-7);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, slice(in[0], 1, 1, 3)); }, {a}) < 1e-7);
  CHECK(check(
            [](Graph& g, std::span<const Var> in) {
              std::vector<Var> parts{in[0], in[1]};
              return contract(g, concat(parts, 0));
            },
            {a, row}) < 1e-7);
  Tensor gain = oracle::random_matrix(rng, 1, 4), bias = oracle::random_matrix(rng, 1, 4);
  CHECK(check(
            [](Graph& g, std::span<const Var> in) {
              return contract(g, layer_norm(in[0], reshape(in[1], {4}), reshape(in[2], {4})));
            },
            {a, gain, bias}) < 1e-6);
  CHECK(check(
            [](Graph& g, std::span<const Var> in) {
              const std::vector<std::size_t> ids{2, 0, 2};
              return contract(g, embedding(in[0], ids));
            },
            {a}) < 1e-7);
  Tensor grid = oracle::random_matrix(rng, 6, 2);
  CHECK(check([](Graph& g, std::span<const Var> in) { return contract(g, upsample_bilinear(in[0], 2, 3, 5, 7)); },
              {grid}) < 1e-7);
}

TEST_CASE("segment attention matches per-head loops") {
  Rng rng(21);
  const std::vector<std::size_t> segments{3, 2};
  const std::size_t heads = 2, d = 4, t = 5, dh = d / heads;
  Tensor qkv = oracle::random_matrix(rng, t, 3 * d, 1.0);
  Graph g;
  Tensor out = segment_attention(g.constant(qkv), heads, segments).value();
  std::size_t start = 0;
  double worst = 0.0;
  for (std::size_t len : segments) {
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = start; i < start + len; ++i) {
        std::vector<double> w;
        for (std::size_t j = start; j < start + len; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qkv.at(i, h * dh + c) * qkv.at(j, d + h * dh + c);
          w.push_back(std::exp(dot / std::sqrt(static_cast<double>(dh))));
        }
        double total = 0.0;
        for (double v : w) total += v;
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < len; ++j) acc += w[j] / total * qkv.at(start + j, 2 * d + h * dh + c);
          worst = std::max(worst, std::abs(acc - out.at(i, h * dh + c)));
        }
      }
    start += len;
  }
  CHECK(worst < 1e-12);
  GraphBuilder fn = [&](Graph& gg, std::span<const Var> in) { return contract(gg, segment_attention(in[0], heads, segments)); };
  std::vector<Tensor> pt{qkv};
  CHECK(gradcheck(fn, pt) < 1e-7);
  const std::vector<std::size_t> bad{3, 3};
  CHECK_THROWS_AS(segment_attention(g.constant(qkv), heads, bad), ShapeError);
}

TEST_CASE("bilinear taps use half-pixel centers") {
  // 2 -> 4: sources at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
  const auto taps = interp_taps(2, 4);
  REQUIRE(taps.size() == 4);
  CHECK(taps[0].lo == 0);
  CHECK(taps[0].frac == 0.0);
  CHECK(taps[1].frac == doctest::Approx(0.25));
  CHECK(taps[2].frac == doctest::Approx(0.75));
  CHECK(taps[3].lo == 1);
  Graph g;
  Tensor up = upsample_bilinear(g.constant(Tensor({2, 1}, std::vector<double>{0, 1})), 1, 2, 1, 4).value();
  CHECK(up[0] == doctest::Approx(0.0));
  CHECK(up[1] == doctest::Approx(0.25));
  CHECK(up[2] == doctest::Approx(0.75));
  CHECK(up[3] == doctest::Approx(1.0));
}

TEST_CASE("gradcheck rejects a bad step and catches a wrong gradient") {
  GraphBuilder fn = [](Graph&, std::span<const Var> in) { return sum_all(in[0]); };
  std::vector<Tensor> pt{Tensor({2}, 1.0)};
  CHECK_THROWS_AS(gradcheck(fn, pt, 0.0), DomainError);
  CHECK_THROWS_AS(gradcheck(fn, pt, 1e-2), DomainError);
  GraphBuilder wrong = [](Graph& g, std::span<const Var> in) {
    Var y = sum_all(in[0]);
    // value of x^2 with the gradient of x: mismatched on purpose
    return g.record(OpKind::Scale, Tensor::scalar(in[0].value()[0] * in[0].value()[0]), {y.id()},
                    [](Graph& gg, std::size_t self) {
                      gg.grad_buffer(gg.inputs(self)[0])[0] += gg.out_grad(self)[0];
                    });
  };
  std::vector<Tensor> one{Tensor({1}, 3.0)};
  CHECK(gradcheck(wrong, one) > 0.5);
}
