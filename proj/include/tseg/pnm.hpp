#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tseg/image.hpp"

namespace tseg {

// Binary portable any-map with maxval 255: P5 (gray) or P6 (RGB).
struct Pnm {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

std::uint8_t quantize(double v);

// 0 = background, 255 = foreground.
std::vector<std::uint8_t> encode_pgm(const BinaryMask& mask);
// Values clamped to [0, 1] and mapped linearly onto 0..255.
std::vector<std::uint8_t> encode_pgm(const Grid& grid);
std::vector<std::uint8_t> encode_ppm(const Image& image);

// Accepts P5/P6 with maxval 255 and '#' comments in the header.
// Throws std::runtime_error on malformed input.
Pnm decode_pnm(std::span<const std::uint8_t> bytes);
Image to_image(const Pnm& pnm);

}  // namespace tseg
