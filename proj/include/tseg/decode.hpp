#pragma once

#include <cstddef>
#include <vector>

#include "tseg/image.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

// Float map in [0, 1] and its binarization for one expression.
struct PixelMask {
  std::size_t expression = 0;
  Grid prob;
  BinaryMask binary;
};

using PixelMasks = std::vector<PixelMask>;

// Half-pixel-center bilinear resampling, source clamped at the borders.
Grid bilinear_upsample(const Grid& grid, std::size_t out_h, std::size_t out_w);

// Output geometry shared by the decoders: the patch grid (grid_h x grid_w,
// rows of M in row-major order) and the target pixel size.
struct DecodeGeometry {
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t height = 64;
  std::size_t width = 64;
};

// M: N x L from mpa_masks. Binarized at 0.5.
PixelMasks decode_mpa(const Tensor& masks, const DecodeGeometry& geo);

// M: N x (L+1) from spa_masks, background in column 0. Each pixel goes to
// the argmax column, lowest index on ties; returns the L expression masks.
PixelMasks decode_spa(const Tensor& masks, const DecodeGeometry& geo);

// S: N x L. relu, divide by the column max, upsample, binarize at beta.
PixelMasks decode_cam(const Tensor& similarity, double beta, const DecodeGeometry& geo);

// S: N x L patch logits. Upsample, sigmoid, binarize at 0.5.
PixelMasks decode_logits(const Tensor& similarity, const DecodeGeometry& geo);

// Binary union, pointwise max of the float maps. Keeps the first expression index.
PixelMask merge_masks(const std::vector<PixelMask>& masks);

}  // namespace tseg
