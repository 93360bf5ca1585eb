#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ucd/tensor.hpp"

namespace ucd {

// Malformed or truncated raster data. Never accompanied by a partial tensor.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RTS1 layout, all little-endian:
//   "RTS1" | u32 rank | rank x u32 extents | prod(extents) x f32 payload
std::string encode_raster(const Tensor& t);

// Decodes one RTS1 record starting at `pos`; advances `pos` past it.
Tensor decode_raster(std::string_view bytes, std::size_t& pos);

void write_raster(const std::filesystem::path& path, const Tensor& t);
Tensor read_raster(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255) of a rank-2 map with values in [0, 1];
// v is stored as round(255 v), half away from zero.
void export_pgm(const Tensor& map, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ucd
