#pragma once

// Minimal stream-based P5/P6 reader kept separate from the library parser.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

struct Raster {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint8_t> data;
};

inline std::optional<Raster> read_pnm(const std::vector<std::uint8_t>& bytes) {
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  Raster r;
  auto token = [&](std::string& out) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    return static_cast<bool>(in >> out);
  };
  std::string w, h, m;
  if (!token(r.magic) || !token(w) || !token(h) || !token(m)) return std::nullopt;
  if (r.magic != "P5" && r.magic != "P6") return std::nullopt;
  r.width = std::stoi(w);
  r.height = std::stoi(h);
  r.maxval = std::stoi(m);
  in.get();  // single whitespace byte before the raster
  const std::size_t channels = r.magic == "P6" ? 3 : 1;
  const std::size_t want = static_cast<std::size_t>(r.width) * r.height * channels;
  const auto start = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - start != want) return std::nullopt;
  r.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  return r;
}

inline std::optional<Raster> read_pnm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return read_pnm(bytes);
}

}  // namespace oracle
