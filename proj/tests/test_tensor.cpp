#include <doctest.h>

#include <atomic>
#include <numeric>

#include "support.hpp"
#include "ucd/parallel.hpp"

using namespace ucd;

TEST_CASE("flatten_spatial relabels (T, D, H, W) to (T, D, H*W)") {
  Tensor f({3, 2, 4, 4});
  std::iota(f.storage().begin(), f.storage().end(), 0.0);
  const Tensor g = flatten_spatial(f);
  CHECK(g.shape() == Shape{3, 2, 16});
  CHECK(g.storage() == f.storage());
  CHECK(unflatten_spatial(g, 4, 4) == f);
}

TEST_CASE("flatten_spatial matches the index formula at random positions") {
  Rng rng(11);
  const Tensor f = testing::random_tensor({2, 8, 5, 7}, rng);
  const Tensor g = flatten_spatial(f);
  for (int k = 0; k < 20; ++k) {
    const std::size_t t = rng.below(2), d = rng.below(8), h = rng.below(5), w = rng.below(7);
    CHECK(g.at({t, d, h * 7 + w}) == f.at({t, d, h, w}));
  }
}

TEST_CASE("flatten_spatial rejects other ranks") {
  CHECK_THROWS_AS(flatten_spatial(Tensor({2, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(unflatten_spatial(Tensor({2, 3, 12}), 5, 2), std::invalid_argument);
}

TEST_CASE("row-major ravel and unravel are inverse") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Shape shape(1 + rng.below(5));
    for (auto& e : shape) e = 1 + rng.below(6);
    const std::size_t n = shape_size(shape);
    for (std::size_t i = 0; i < n; i += 1 + n / 17) {
      const auto idx = unravel_index(i, shape);
      CHECK(ravel_index(idx, shape) == i);
    }
  }
}

TEST_CASE("tensor construction and access checks") {
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  Tensor t({2, 3});
  CHECK_THROWS_AS(t.at({2, 0}), std::out_of_range);
  CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
  t.at({1, 2}) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK(t.slab({1})[2] == 5.0);
  CHECK(t.matrix(0, 2, 3)(1, 2) == 5.0);
}

TEST_CASE("rng streams are reproducible and follow the documented mapping") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.bits() == b.bits());

  std::mt19937_64 engine(7);
  Rng r(7);
  const std::uint64_t x = engine();
  CHECK(r.uniform() == double(x >> 11) * 0x1.0p-53);

  Rng u(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("parallel_for covers every index once for any worker count") {
  for (std::size_t w : {1, 2, 3, 8}) {
    set_workers(w);
    std::vector<std::atomic<int>> hits(1001);
    parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  set_workers(1);
}

TEST_CASE("parallel_for propagates exceptions") {
  set_workers(4);
  CHECK_THROWS_AS(parallel_for(100, [](std::size_t b, std::size_t) {
                    if (b > 0) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  set_workers(1);
}
