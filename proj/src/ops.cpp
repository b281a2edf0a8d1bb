#include "tseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tseg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands belong to different graphs");
  return a.graph();
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Input flat offset for every output element, or empty when shapes match.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  const std::size_t shift = r - in.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    stride[k + shift] = in[k] == 1 ? 0 : s;
    s *= in[k];
  }
  std::vector<std::size_t> result(shape_size(out));
  std::vector<std::size_t> idx(r, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < result.size(); ++flat) {
    result[flat] = cur;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      cur += stride[k];
      if (idx[k] < out[k]) break;
      cur -= stride[k] * out[k];
      idx[k] = 0;
    }
  }
  return result;
}

inline std::size_t at_offset(const std::vector<std::size_t>& offs, std::size_t i) {
  return offs.empty() ? i : offs[i];
}

// df_a(a, b, y) and df_b(a, b, y) are partial derivatives of f at (a, b).
template <class F, class DA, class DB>
Var binary(OpKind kind, Var a, Var b, F f, DA df_a, DB df_b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  auto oa = broadcast_offsets(av.shape(), out_shape);
  auto ob = broadcast_offsets(bv.shape(), out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(av[at_offset(oa, i)], bv[at_offset(ob, i)]);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(kind, std::move(out), {ai, bi},
                  [ai, bi, oa = std::move(oa), ob = std::move(ob), df_a, df_b](Graph& g, std::size_t self) {
                    const Tensor& av = g.value(ai);
                    const Tensor& bv = g.value(bi);
                    const Tensor& y = g.value(self);
                    auto go = g.out_grad(self);
                    if (g.requires_grad(ai)) {
                      auto da = g.grad_buffer(ai);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        const auto ia = at_offset(oa, i), ib = at_offset(ob, i);
                        da[ia] += go[i] * df_a(av[ia], bv[ib], y[i]);
                      }
                    }
                    if (g.requires_grad(bi)) {
                      auto db = g.grad_buffer(bi);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        const auto ia = at_offset(oa, i), ib = at_offset(ob, i);
                        db[ib] += go[i] * df_b(av[ia], bv[ib], y[i]);
                      }
                    }
                  });
}

// df(x, y) is the derivative of f at x, where y = f(x).
template <class F, class DF>
Var unary(OpKind kind, Var x, F f, DF df) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return g.record(kind, std::move(out), {xi}, [xi, df](Graph& g, std::size_t self) {
    const Tensor& xv = g.value(xi);
    const Tensor& y = g.value(self);
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * df(xv[i], y[i]);
  });
}

struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisView v;
  for (std::size_t k = 0; k < axis; ++k) v.outer *= s[k];
  v.n = s[axis];
  for (std::size_t k = axis + 1; k < s.size(); ++k) v.inner *= s[k];
  return v;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape r = s;
  if (keepdim) {
    r[axis] = 1;
  } else {
    r.erase(r.begin() + static_cast<std::ptrdiff_t>(axis));
    if (r.empty()) r.push_back(1);
  }
  return r;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::size_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

Var add(Var a, Var b) {
  return binary(
      OpKind::Add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::Sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::Mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      OpKind::Div, a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Var neg(Var x) {
  return unary(OpKind::Neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var add_scalar(Var x, double c) {
  return unary(OpKind::AddScalar, x, [c](double v) { return v + c; },
               [](double, double) { return 1.0; });
}

Var scale(Var x, double c) {
  return unary(OpKind::Scale, x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av.shape()) + " @ " +
                     shape_str(bv.shape()));
  }
  Tensor out({m, n});
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             Nc = static_cast<Eigen::Index>(n);
  MutMap(out.data().data(), M, Nc).noalias() =
      ConstMap(av.data().data(), M, K) * ConstMap(bv.data().data(), K, Nc);
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(OpKind::MatMul, std::move(out), {ai, bi}, [ai, bi, M, K, Nc](Graph& g, std::size_t self) {
    ConstMap G(g.out_grad(self).data(), M, Nc);
    if (g.requires_grad(ai)) {
      MutMap(g.grad_buffer(ai).data(), M, K).noalias() +=
          G * ConstMap(g.value(bi).data().data(), K, Nc).transpose();
    }
    if (g.requires_grad(bi)) {
      MutMap(g.grad_buffer(bi).data(), K, Nc).noalias() +=
          ConstMap(g.value(ai).data().data(), M, K).transpose() * G;
    }
  });
}

Var segment_attention(Var qkv, std::size_t heads, std::span<const std::size_t> segments) {
  Graph& g = qkv.graph();
  const Tensor& xv = qkv.value();
  require_rank2(xv, "segment_attention");
  const std::size_t t = xv.dim(0), w = xv.dim(1);
  if (heads == 0 || w % (3 * heads) != 0) {
    throw ShapeError("segment_attention: width " + std::to_string(w) + " is not 3 x heads x head size");
  }
  std::size_t total = 0;
  for (std::size_t len : segments) {
    if (len == 0) throw ShapeError("segment_attention: empty segment");
    total += len;
  }
  if (total != t) throw ShapeError("segment_attention: segments cover " + std::to_string(total) + " of " +
                                   std::to_string(t) + " rows");
  const std::size_t d = w / 3, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
  using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
  const auto W = static_cast<Eigen::Index>(w), D = static_cast<Eigen::Index>(d), Dh = static_cast<Eigen::Index>(dh);
  Tensor out({t, d});
  auto probs = std::make_shared<std::vector<RowMat>>();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (std::size_t len : segments) {
    offsets.push_back(off);
    const auto L = static_cast<Eigen::Index>(len);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* base = xv.data().data() + off * w + h * dh;
      Strided q(base, L, Dh, Eigen::OuterStride<>(W));
      Strided k(base + d, L, Dh, Eigen::OuterStride<>(W));
      Strided v(base + 2 * d, L, Dh, Eigen::OuterStride<>(W));
      RowMat a = (q * k.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < L; ++i) {
        const double mx = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - mx).exp();
        a.row(i) /= a.row(i).sum();
      }
      MutStrided(out.data().data() + off * d + h * dh, L, Dh, Eigen::OuterStride<>(D)).noalias() = a * v;
      probs->push_back(std::move(a));
    }
    off += len;
  }
  const std::size_t xi = qkv.id();
  std::vector<std::size_t> lens(segments.begin(), segments.end());
  return g.record(OpKind::Attention, std::move(out), {xi},
                  [xi, heads, w, d, dh, inv_sqrt, probs, offsets, lens](Graph& g, std::size_t self) {
                    const auto W = static_cast<Eigen::Index>(w), D = static_cast<Eigen::Index>(d),
                               Dh = static_cast<Eigen::Index>(dh);
                    const double* x = g.value(xi).data().data();
                    const double* go = g.out_grad(self).data();
                    double* dx = g.grad_buffer(xi).data();
                    std::size_t idx = 0;
                    for (std::size_t s = 0; s < lens.size(); ++s) {
                      const auto L = static_cast<Eigen::Index>(lens[s]);
                      const std::size_t off = offsets[s];
                      for (std::size_t h = 0; h < heads; ++h, ++idx) {
                        const RowMat& a = (*probs)[idx];
                        const double* base = x + off * w + h * dh;
                        double* dbase = dx + off * w + h * dh;
                        Strided q(base, L, Dh, Eigen::OuterStride<>(W));
                        Strided k(base + d, L, Dh, Eigen::OuterStride<>(W));
                        Strided v(base + 2 * d, L, Dh, Eigen::OuterStride<>(W));
                        Strided dout(go + off * d + h * dh, L, Dh, Eigen::OuterStride<>(D));
                        MutStrided(dbase + 2 * d, L, Dh, Eigen::OuterStride<>(W)).noalias() += a.transpose() * dout;
                        RowMat da = dout * v.transpose();
                        const Eigen::VectorXd dot = (da.array() * a.array()).rowwise().sum();
                        RowMat ds = (a.array() * (da.array().colwise() - dot.array())).matrix() * inv_sqrt;
                        MutStrided(dbase, L, Dh, Eigen::OuterStride<>(W)).noalias() += ds * k;
                        MutStrided(dbase + d, L, Dh, Eigen::OuterStride<>(W)).noalias() += ds.transpose() * q;
                      }
                    }
                  });
}

Var transpose(Var x) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  require_rank2(xv, "transpose");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const std::size_t xi = x.id();
  return g.record(OpKind::Transpose, std::move(out), {xi}, [xi, r, c](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += go[j * r + i];
  });
}

Var exp(Var x) {
  return unary(OpKind::Exp, x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: argument <= 0");
  }
  return unary(OpKind::Log, x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var pow(Var x, double p) {
  const bool integral = std::floor(p) == p;
  for (double v : x.value().data()) {
    if (v < 0.0 && !integral) throw DomainError("pow: negative base with non-integer exponent");
    if (v == 0.0 && p < 0.0) throw DomainError("pow: zero base with negative exponent");
  }
  return unary(OpKind::Pow, x, [p](double v) { return std::pow(v, p); },
               [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Var sigmoid(Var x) {
  return unary(OpKind::Sigmoid, x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var x) {
  return unary(
      OpKind::LogSigmoid, x,
      [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(-v); });
}

Var relu(Var x) {
  return unary(OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      OpKind::Gelu, x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
      });
}

Var sum(Var x, std::size_t axis, bool keepdim) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Tensor out(reduced_shape(xv.shape(), axis, keepdim));
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.n; ++k) {
      const double* src = &xv.data()[(o * v.n + k) * v.inner];
      double* dst = &out.data()[o * v.inner];
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  const std::size_t xi = x.id();
  return g.record(OpKind::Sum, std::move(out), {xi}, [xi, v](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t k = 0; k < v.n; ++k)
        for (std::size_t i = 0; i < v.inner; ++i) dx[(o * v.n + k) * v.inner + i] += go[o * v.inner + i];
  });
}

Var sum_all(Var x) {
  const std::size_t n = x.value().size();
  return sum(reshape(x, {n}), 0);
}

Var mean(Var x, std::size_t axis, bool keepdim) {
  const std::size_t n = axis_view(x.shape(), axis).n;
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Var max(Var x, std::size_t axis, bool keepdim) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Tensor out(reduced_shape(xv.shape(), axis, keepdim));
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = o * v.n * v.inner + i;
      for (std::size_t k = 1; k < v.n; ++k) {
        const std::size_t idx = (o * v.n + k) * v.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * v.inner + i] = xv[best];
      arg[o * v.inner + i] = best;
    }
  const std::size_t xi = x.id();
  return g.record(OpKind::Max, std::move(out), {xi}, [xi, arg = std::move(arg)](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t j = 0; j < go.size(); ++j) dx[arg[j]] += go[j];
  });
}

Var softmax(Var x, std::size_t axis) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.n * v.inner + i;
      double m = xv[base];
      for (std::size_t k = 1; k < v.n; ++k) m = std::max(m, xv[base + k * v.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(xv[base + k * v.inner] - m);
        out[base + k * v.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[base + k * v.inner] /= total;
    }
  const std::size_t xi = x.id();
  return g.record(OpKind::Softmax, std::move(out), {xi}, [xi, v](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.n * v.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.n; ++k) dot += go[base + k * v.inner] * y[base + k * v.inner];
        for (std::size_t k = 0; k < v.n; ++k) {
          const std::size_t idx = base + k * v.inner;
          dx[idx] += y[idx] * (go[idx] - dot);
        }
      }
  });
}

Var broadcast_to(Var x, const Shape& shape) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (broadcast_shape(xv.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + shape_str(xv.shape()) + " to " + shape_str(shape));
  }
  auto offs = broadcast_offsets(xv.shape(), shape);
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[at_offset(offs, i)];
  const std::size_t xi = x.id();
  return g.record(OpKind::Broadcast, std::move(out), {xi}, [xi, offs = std::move(offs)](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < go.size(); ++i) dx[at_offset(offs, i)] += go[i];
  });
}

Var reshape(Var x, const Shape& shape) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size()) {
    throw ShapeError("cannot reshape " + shape_str(xv.shape()) + " to " + shape_str(shape));
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::Reshape, Tensor(shape, xv.vec()), {xi}, [xi](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  if (begin >= end || end > v.n) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(xv.shape()));
  }
  Shape s = xv.shape();
  s[axis] = end - begin;
  Tensor out(s);
  const std::size_t len = (end - begin) * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = &xv.data()[(o * v.n + begin) * v.inner];
    std::copy(src, src + len, &out.data()[o * len]);
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::Slice, std::move(out), {xi}, [xi, v, begin, len](Graph& g, std::size_t self) {
    auto go = g.out_grad(self);
    auto dx = g.grad_buffer(xi);
    for (std::size_t o = 0; o < v.outer; ++o) {
      double* dst = &dx[(o * v.n + begin) * v.inner];
      for (std::size_t i = 0; i < len; ++i) dst[i] += go[o * len + i];
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Graph& g = parts[0].graph();
  Shape s = parts[0].shape();
  if (axis >= s.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw std::logic_error("concat operands belong to different graphs");
    Shape ps = p.shape();
    if (ps.size() != s.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && ps[k] != s[k]) {
        throw ShapeError("concat extent mismatch " + shape_str(ps) + " vs " + shape_str(s));
      }
    }
    total += ps[axis];
    ids.push_back(p.id());
    widths.push_back(ps[axis]);
  }
  const AxisView v0 = axis_view(s, axis);
  s[axis] = total;
  Tensor out(s);
  const std::size_t row = total * v0.inner;
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].value().data();
    const std::size_t len = widths[p] * v0.inner;
    for (std::size_t o = 0; o < v0.outer; ++o) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(o * len),
                src.begin() + static_cast<std::ptrdiff_t>((o + 1) * len), &out.data()[o * row + off]);
    }
    off += len;
  }
  const std::size_t outer = v0.outer, inner = v0.inner;
  auto inputs = ids;
  return g.record(OpKind::Concat, std::move(out), std::move(inputs),
                  [ids, widths, outer, inner, row](Graph& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      const std::size_t len = widths[p] * inner;
                      if (g.requires_grad(ids[p])) {
                        auto dx = g.grad_buffer(ids[p]);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < len; ++i) dx[o * len + i] += go[o * row + off + i];
                      }
                      off += len;
                    }
                  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const std::size_t rows = xv.size() / d;
  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size()), rstd(rows);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv.data()[r * d];
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * rstd[r];
      out[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return g.record(OpKind::LayerNorm, std::move(out), {xi, gi, bi},
                  [xi, gi, bi, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& gv = g.value(gi);
                    if (g.requires_grad(gi)) {
                      auto dg = g.grad_buffer(gi);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < d; ++i) dg[i] += go[r * d + i] * xhat[r * d + i];
                    }
                    if (g.requires_grad(bi)) {
                      auto db = g.grad_buffer(bi);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < d; ++i) db[i] += go[r * d + i];
                    }
                    if (g.requires_grad(xi)) {
                      auto dx = g.grad_buffer(xi);
                      const double inv_d = 1.0 / static_cast<double>(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t i = 0; i < d; ++i) {
                          const double dxh = go[r * d + i] * gv[i];
                          m1 += dxh;
                          m2 += dxh * xhat[r * d + i];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for (std::size_t i = 0; i < d; ++i) {
                          const double dxh = go[r * d + i] * gv[i];
                          dx[r * d + i] += rstd[r] * (dxh - m1 - xhat[r * d + i] * m2);
                        }
                      }
                    }
                  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  Graph& g = table.graph();
  const Tensor& tv = table.value();
  require_rank2(tv, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " >= table size " +
                              std::to_string(vocab));
    }
    std::copy_n(&tv.data()[ids[r] * d], d, &out.data()[r * d]);
  }
  const std::size_t ti = table.id();
  return g.record(OpKind::Embedding, std::move(out), {ti},
                  [ti, d, idv = std::vector<std::size_t>(ids.begin(), ids.end())](Graph& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto dt = g.grad_buffer(ti);
                    for (std::size_t r = 0; r < idv.size(); ++r)
                      for (std::size_t i = 0; i < d; ++i) dt[idv[r] * d + i] += go[r * d + i];
                  });
}

std::vector<InterpTap> interp_taps(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw ShapeError("interp_taps: sizes must be positive");
  std::vector<InterpTap> taps(out);
  const double hi_limit = static_cast<double>(in - 1);
  for (std::size_t u = 0; u < out; ++u) {
    double src = (static_cast<double>(u) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, hi_limit);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[u].lo = lo;
    taps[u].hi = std::min(lo + 1, in - 1);
    taps[u].frac = src - static_cast<double>(lo);
  }
  return taps;
}

Var upsample_bilinear(Var x, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  require_rank2(xv, "upsample_bilinear");
  if (xv.dim(0) != h * w) {
    throw ShapeError("upsample_bilinear: " + std::to_string(xv.dim(0)) + " rows is not a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  const std::size_t c = xv.dim(1);
  auto ty = interp_taps(h, out_h);
  auto tx = interp_taps(w, out_w);
  Tensor out({out_h * out_w, c});
  for (std::size_t u = 0; u < out_h; ++u) {
    const auto& a = ty[u];
    for (std::size_t v = 0; v < out_w; ++v) {
      const auto& b = tx[v];
      const double* p00 = &xv.data()[(a.lo * w + b.lo) * c];
      const double* p01 = &xv.data()[(a.lo * w + b.hi) * c];
      const double* p10 = &xv.data()[(a.hi * w + b.lo) * c];
      const double* p11 = &xv.data()[(a.hi * w + b.hi) * c];
      double* dst = &out.data()[(u * out_w + v) * c];
      for (std::size_t k = 0; k < c; ++k) {
        const double top = (1.0 - b.frac) * p00[k] + b.frac * p01[k];
        const double bot = (1.0 - b.frac) * p10[k] + b.frac * p11[k];
        dst[k] = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::Upsample, std::move(out), {xi},
                  [xi, w, c, out_w, ty = std::move(ty), tx = std::move(tx)](Graph& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto dx = g.grad_buffer(xi);
                    for (std::size_t u = 0; u < ty.size(); ++u) {
                      const auto& a = ty[u];
                      for (std::size_t v = 0; v < tx.size(); ++v) {
                        const auto& b = tx[v];
                        const double w00 = (1.0 - a.frac) * (1.0 - b.frac), w01 = (1.0 - a.frac) * b.frac;
                        const double w10 = a.frac * (1.0 - b.frac), w11 = a.frac * b.frac;
                        const double* src = &go[(u * out_w + v) * c];
                        for (std::size_t k = 0; k < c; ++k) {
                          dx[(a.lo * w + b.lo) * c + k] += w00 * src[k];
                          dx[(a.lo * w + b.hi) * c + k] += w01 * src[k];
                          dx[(a.hi * w + b.lo) * c + k] += w10 * src[k];
                          dx[(a.hi * w + b.hi) * c + k] += w11 * src[k];
                        }
                      }
                    }
                  });
}

}  // namespace tseg
