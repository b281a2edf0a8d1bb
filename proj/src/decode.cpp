#include "tseg/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tseg/ops.hpp"

namespace tseg {

Grid bilinear_upsample(const Grid& grid, std::size_t out_h, std::size_t out_w) {
  if (grid.height == 0 || grid.width == 0) throw std::invalid_argument("bilinear_upsample: empty source grid");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_upsample: target size must be positive");
  if (grid.values.size() != grid.height * grid.width) {
    throw std::invalid_argument("bilinear_upsample: grid storage does not match its extents");
  }
  const auto ty = interp_taps(grid.height, out_h);
  const auto tx = interp_taps(grid.width, out_w);
  Grid out(out_h, out_w);
  for (std::size_t u = 0; u < out_h; ++u) {
    const auto& a = ty[u];
    for (std::size_t v = 0; v < out_w; ++v) {
      const auto& b = tx[v];
      const double top = (1.0 - b.frac) * grid.at(a.lo, b.lo) + b.frac * grid.at(a.lo, b.hi);
      const double bot = (1.0 - b.frac) * grid.at(a.hi, b.lo) + b.frac * grid.at(a.hi, b.hi);
      out.at(u, v) = (1.0 - a.frac) * top + a.frac * bot;
    }
  }
  return out;
}

namespace {

void check_geometry(const Tensor& m, const DecodeGeometry& geo, const char* who) {
  if (m.rank() != 2) throw ShapeError(std::string(who) + ": expected a matrix, got " + shape_str(m.shape()));
  if (geo.grid_h == 0 || geo.grid_w == 0 || geo.height == 0 || geo.width == 0) {
    throw std::invalid_argument(std::string(who) + ": geometry extents must be positive");
  }
  if (m.dim(0) != geo.grid_h * geo.grid_w) {
    throw ShapeError(std::string(who) + ": " + std::to_string(m.dim(0)) + " rows do not form a " +
                     std::to_string(geo.grid_h) + "x" + std::to_string(geo.grid_w) + " patch grid");
  }
}

Grid column_grid(const Tensor& m, std::size_t col, const DecodeGeometry& geo) {
  Grid g(geo.grid_h, geo.grid_w);
  for (std::size_t i = 0; i < m.dim(0); ++i) g.values[i] = m.at(i, col);
  return g;
}

PixelMask threshold(std::size_t expression, Grid prob, double cut) {
  PixelMask pm{expression, std::move(prob), BinaryMask(0, 0)};
  pm.binary = BinaryMask(pm.prob.height, pm.prob.width);
  for (std::size_t i = 0; i < pm.prob.values.size(); ++i) pm.binary.bits[i] = pm.prob.values[i] > cut ? 1 : 0;
  return pm;
}

}  // namespace

PixelMasks decode_mpa(const Tensor& masks, const DecodeGeometry& geo) {
  check_geometry(masks, geo, "decode_mpa");
  PixelMasks out;
  for (std::size_t j = 0; j < masks.dim(1); ++j) {
    out.push_back(threshold(j, bilinear_upsample(column_grid(masks, j, geo), geo.height, geo.width), 0.5));
  }
  return out;
}

PixelMasks decode_spa(const Tensor& masks, const DecodeGeometry& geo) {
  check_geometry(masks, geo, "decode_spa");
  if (masks.dim(1) < 2) throw ShapeError("decode_spa: need a background column and at least one expression");
  std::vector<Grid> up;
  for (std::size_t j = 0; j < masks.dim(1); ++j) {
    up.push_back(bilinear_upsample(column_grid(masks, j, geo), geo.height, geo.width));
  }
  PixelMasks out;
  for (std::size_t j = 1; j < up.size(); ++j) {
    out.push_back(PixelMask{j - 1, up[j], BinaryMask(geo.height, geo.width)});
  }
  for (std::size_t p = 0; p < geo.height * geo.width; ++p) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < up.size(); ++j) {
      if (up[j].values[p] > up[best].values[p]) best = j;
    }
    if (best > 0) out[best - 1].binary.bits[p] = 1;
  }
  return out;
}

PixelMasks decode_cam(const Tensor& similarity, double beta, const DecodeGeometry& geo) {
  check_geometry(similarity, geo, "decode_cam");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("decode_cam: beta must lie in (0, 1)");
  PixelMasks out;
  for (std::size_t j = 0; j < similarity.dim(1); ++j) {
    Grid cam = column_grid(similarity, j, geo);
    double peak = 0.0;
    for (auto& v : cam.values) {
      v = std::max(v, 0.0);
      peak = std::max(peak, v);
    }
    for (auto& v : cam.values) v = peak > 0.0 ? v / peak : 0.0;
    out.push_back(threshold(j, bilinear_upsample(cam, geo.height, geo.width), beta));
  }
  return out;
}

PixelMasks decode_logits(const Tensor& similarity, const DecodeGeometry& geo) {
  check_geometry(similarity, geo, "decode_logits");
  PixelMasks out;
  for (std::size_t j = 0; j < similarity.dim(1); ++j) {
    Grid up = bilinear_upsample(column_grid(similarity, j, geo), geo.height, geo.width);
    for (auto& v : up.values) v = 1.0 / (1.0 + std::exp(-v));
    out.push_back(threshold(j, std::move(up), 0.5));
  }
  return out;
}

PixelMask merge_masks(const std::vector<PixelMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("merge_masks: nothing to merge");
  PixelMask out = masks.front();
  for (std::size_t k = 1; k < masks.size(); ++k) {
    const auto& m = masks[k];
    if (m.prob.height != out.prob.height || m.prob.width != out.prob.width ||
        m.binary.height != out.binary.height || m.binary.width != out.binary.width) {
      throw ShapeError("merge_masks: mask sizes differ");
    }
    for (std::size_t i = 0; i < out.prob.values.size(); ++i) {
      out.prob.values[i] = std::max(out.prob.values[i], m.prob.values[i]);
    }
    for (std::size_t i = 0; i < out.binary.bits.size(); ++i) out.binary.bits[i] |= m.binary.bits[i];
  }
  return out;
}

}  // namespace tseg
