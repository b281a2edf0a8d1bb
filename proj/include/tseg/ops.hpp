#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "tseg/graph.hpp"

// Differentiable primitives. Elementwise binary ops broadcast with numpy
// semantics (shapes right-aligned, extent 1 stretches).
namespace tseg {

Shape broadcast_shape(const Shape& a, const Shape& b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var x);
Var add_scalar(Var x, double c);
Var scale(Var x, double c);

// Rank-2 only.
Var matmul(Var a, Var b);
Var transpose(Var x);

Var exp(Var x);
// Throws DomainError for any entry <= 0.
Var log(Var x);
// Throws DomainError where x^p is undefined over the reals (x < 0 with
// non-integer p, x == 0 with p < 0).
Var pow(Var x, double p);
Var sigmoid(Var x);
// log(sigmoid(x)) without cancellation.
Var log_sigmoid(Var x);
Var relu(Var x);
// Exact (erf) GELU.
Var gelu(Var x);

Var sum(Var x, std::size_t axis, bool keepdim = false);
Var sum_all(Var x);
Var mean(Var x, std::size_t axis, bool keepdim = false);
// Backward routes the gradient to the first maximal index along `axis`.
Var max(Var x, std::size_t axis, bool keepdim = false);
// Stable (max-subtracted) softmax.
Var softmax(Var x, std::size_t axis);

Var broadcast_to(Var x, const Shape& shape);
Var reshape(Var x, const Shape& shape);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);

// Normalizes over the last axis, then applies per-feature gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Gathers rows of a rank-2 table. Throws std::out_of_range on a bad id.
Var embedding(Var table, std::span<const std::size_t> ids);

// Rows of `x` are an h*w grid (row-major); columns are channels. Returns
// (out_h*out_w) x C, bilinearly interpolated with half-pixel centers.
Var upsample_bilinear(Var x, std::size_t h, std::size_t w, std::size_t out_h,
                      std::size_t out_w);

// One output coordinate's two source neighbours and blend weight, under the
// half-pixel-center convention: src = (dst + 0.5) * in / out - 0.5, clamped
// to [0, in - 1].
// Multi-head scaled dot-product attention over a packed T x 3D matrix of
// [queries | keys | values]. Rows are split into consecutive segments that
// attend only within themselves; heads split each D-wide block into equal
// column groups. Returns T x D with heads concatenated.
Var segment_attention(Var qkv, std::size_t heads, std::span<const std::size_t> segments);

struct InterpTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};
std::vector<InterpTap> interp_taps(std::size_t in, std::size_t out);

}  // namespace tseg
