#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tseg/encoders.hpp"

namespace tseg {

// On-disk layout (little-endian):
//   "TSEGCKPT" | version u32 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank,
//               float32 payload.
// The iteration counter and config echo travel as two extra tensors,
// "meta.iteration" (one value) and "meta.config" (one byte per element).
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ParamSet params;
  std::uint64_t iteration = 0;
  std::string config_text;

  // Parameters are rounded to float32 on write.
  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tseg
