#include "ucd/raster_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ucd {

namespace {

constexpr std::string_view kMagic = "RTS1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= std::uint32_t(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_raster(const Tensor& t) {
  std::string out;
  out.reserve(8 + 4 * t.rank() + 4 * t.size());
  out.append(kMagic);
  put_u32(out, std::uint32_t(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("extent does not fit in 32 bits");
    }
    put_u32(out, std::uint32_t(e));
  }
  for (double v : t.values()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_raster(std::string_view bytes, std::size_t& pos) {
  const std::size_t avail = bytes.size() - std::min(pos, bytes.size());
  if (avail < 8) throw FormatError("raster header truncated");
  if (bytes.substr(pos, 4) != kMagic) {
    throw FormatError("bad raster magic '" + std::string(bytes.substr(pos, 4)) +
                      "', expected RTS1");
  }
  const std::uint32_t rank = get_u32(bytes, pos + 4);
  if (rank > kMaxRank) {
    throw FormatError("raster rank " + std::to_string(rank) + " exceeds 5");
  }
  if (avail < 8 + 4 * std::size_t(rank)) throw FormatError("raster extents truncated");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::uint32_t a = 0; a < rank; ++a) {
    shape[a] = get_u32(bytes, pos + 8 + 4 * a);
    if (shape[a] != 0 &&
        count > std::numeric_limits<std::uint64_t>::max() / 4 / shape[a]) {
      throw FormatError("raster extents overflow");
    }
    count *= shape[a];
  }
  const std::size_t header = 8 + 4 * std::size_t(rank);
  const std::uint64_t payload = 4 * count;
  if (payload > avail - header) {
    throw FormatError("raster payload truncated: header declares " +
                      std::to_string(count) + " values " + shape_str(shape) +
                      ", file holds " + std::to_string((avail - header) / 4));
  }
  std::vector<double> data(count);
  const std::size_t base = pos + header;
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, base + 4 * i));
  }
  pos = base + payload;
  return Tensor(std::move(shape), std::move(data));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void write_raster(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, encode_raster(t));
}

Tensor read_raster(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  Tensor t = decode_raster(bytes, pos);
  if (pos != bytes.size()) {
    throw FormatError(path.string() + ": trailing bytes after raster payload");
  }
  return t;
}

void export_pgm(const Tensor& map, const std::filesystem::path& path) {
  require_rank(map, 2, "export_pgm");
  std::string out = "P5\n" + std::to_string(map.dim(1)) + " " +
                    std::to_string(map.dim(0)) + "\n255\n";
  out.reserve(out.size() + map.size());
  for (double v : map.values()) {
    const long q = std::lround(255.0 * std::clamp(v, 0.0, 1.0));
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  write_file(path, out);
}

}  // namespace ucd
