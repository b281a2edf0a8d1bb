#include "tseg/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tseg {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

std::vector<std::uint8_t> with_header(const char* magic, std::size_t w, std::size_t h, std::size_t payload) {
  const std::string head = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(out.size() + payload);
  return out;
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t number() {
    skip();
    if (pos_ >= in_.size() || !std::isdigit(in_[pos_])) throw std::runtime_error("pnm: expected a number in header");
    std::size_t v = 0;
    while (pos_ < in_.size() && std::isdigit(in_[pos_])) {
      v = v * 10 + (in_[pos_++] - '0');
      if (v > (1u << 24)) throw std::runtime_error("pnm: header value too large");
    }
    return v;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= in_.size() || !std::isspace(in_[pos_])) throw std::runtime_error("pnm: missing raster separator");
    return pos_ + 1;
  }
  std::size_t pos_ = 2;

 private:
  void skip() {
    while (pos_ < in_.size()) {
      if (in_[pos_] == '#') {
        while (pos_ < in_.size() && in_[pos_] != '\n') ++pos_;
      } else if (std::isspace(in_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  std::span<const std::uint8_t> in_;
};

}  // namespace

std::vector<std::uint8_t> encode_pgm(const BinaryMask& mask) {
  auto out = with_header("P5", mask.width, mask.height, mask.bits.size());
  for (auto b : mask.bits) out.push_back(b ? 255 : 0);
  return out;
}

std::vector<std::uint8_t> encode_pgm(const Grid& grid) {
  auto out = with_header("P5", grid.width, grid.height, grid.values.size());
  for (double v : grid.values) out.push_back(quantize(v));
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("encode_ppm: image must have 3 channels");
  auto out = with_header("P6", image.width, image.height, image.pixels.size());
  for (double v : image.pixels) out.push_back(quantize(v));
  return out;
}

Pnm decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw std::runtime_error("pnm: not a binary P5/P6 file");
  }
  Pnm p;
  p.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes);
  p.width = r.number();
  p.height = r.number();
  const std::size_t maxval = r.number();
  if (p.width == 0 || p.height == 0) throw std::runtime_error("pnm: zero extent");
  if (maxval != 255) throw std::runtime_error("pnm: only maxval 255 is supported");
  const std::size_t start = r.raster_start();
  const std::size_t n = p.width * p.height * p.channels;
  if (bytes.size() - start != n) throw std::runtime_error("pnm: raster size does not match header");
  p.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return p;
}

Image to_image(const Pnm& pnm) {
  Image img(pnm.height, pnm.width, pnm.channels);
  for (std::size_t i = 0; i < pnm.pixels.size(); ++i) img.pixels[i] = pnm.pixels[i] / 255.0;
  return img;
}

}  // namespace tseg
