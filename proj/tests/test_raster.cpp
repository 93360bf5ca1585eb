#include <doctest.h>

#include <filesystem>

#include "support.hpp"
#include "ucd/raster_io.hpp"

using namespace ucd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ucd_test_raster";
  fs::create_directories(dir);
  return dir / name;
}

std::string header(std::initializer_list<std::uint32_t> extents) {
  std::string h = "RTS1";
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) h.push_back(char((v >> (8 * i)) & 0xFF));
  };
  put(std::uint32_t(extents.size()));
  for (auto e : extents) put(e);
  return h;
}

}  // namespace

TEST_CASE("2x2 tensor writes a 32-byte file and round-trips exactly") {
  const Tensor t({2, 2}, {0, 1, 2, 3});
  const auto path = scratch("small.rts");
  write_raster(path, t);
  CHECK(fs::file_size(path) == 32);
  CHECK(read_raster(path) == t);
  const std::string bytes = read_file(path);
  CHECK(bytes.substr(0, 4) == "RTS1");
  CHECK(bytes[4] == 2);
}

TEST_CASE("round trip is exact for float-representable values and byte-stable") {
  Rng rng(1);
  Tensor t = testing::random_tensor({3, 2, 5, 4}, rng);
  for (auto& v : t.values()) v = double(float(v));
  const auto a = scratch("a.rts"), b = scratch("b.rts");
  write_raster(a, t);
  const Tensor back = read_raster(a);
  CHECK(back == t);
  write_raster(b, back);
  CHECK(read_file(a) == read_file(b));
}

TEST_CASE("bad magic is rejected") {
  std::string bytes = header({2, 2}) + std::string(16, '\0');
  bytes.replace(0, 4, "XXXX");
  std::size_t pos = 0;
  CHECK_THROWS_AS(decode_raster(bytes, pos), FormatError);
}

TEST_CASE("truncated payload is rejected with the declared count") {
  const std::string bytes = header({10, 10}) + std::string(50 * 4, '\0');
  std::size_t pos = 0;
  try {
    decode_raster(bytes, pos);
    FAIL("expected a truncation error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("100") != std::string::npos);
    CHECK(std::string(e.what()).find("50") != std::string::npos);
  }
}

TEST_CASE("overflowing extents are rejected before allocation") {
  const std::string bytes = header({0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF});
  std::size_t pos = 0;
  CHECK_THROWS_AS(decode_raster(bytes, pos), FormatError);
}

TEST_CASE("trailing bytes and missing files are errors") {
  const auto path = scratch("trailing.rts");
  write_file(path, header({1}) + std::string(4, '\0') + "x");
  CHECK_THROWS_AS(read_raster(path), FormatError);
  CHECK_THROWS(read_raster(scratch("does_not_exist.rts")));
}

TEST_CASE("pgm export rounds half away from zero") {
  auto pixels = [](double v) {
    const auto path = scratch("map.pgm");
    export_pgm(Tensor({4, 4}, std::vector<double>(16, v)), path);
    const std::string bytes = read_file(path);
    CHECK(bytes.rfind("P5", 0) == 0);
    return bytes.substr(bytes.size() - 16);
  };
  CHECK(pixels(0.0) == std::string(16, '\0'));
  CHECK(pixels(1.0) == std::string(16, char(255)));
  CHECK(pixels(0.5) == std::string(16, char(128)));
  CHECK_THROWS_AS(export_pgm(Tensor({2, 2, 2}), scratch("bad.pgm")), std::invalid_argument);
}
