#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace ucd;
using testing::GradCheck;
using testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

template <typename Layer>
GradCheck check_for(Layer& layer, ParameterList params = {}) {
  return GradCheck{[&layer](const Tensor& x) { return layer.forward(x, Mode::train); },
                   [&layer](const Tensor& g) { return layer.backward(g); }, std::move(params)};
}

void randomize(const ParameterList& params, Rng& rng) {
  for (Parameter* p : params)
    if (p->trainable) p->value = random_tensor(p->value.shape(), rng, -0.5, 0.5);
}

}  // namespace

TEST_CASE("conv 3x3 gradients match central differences on a 6x6 input") {
  Rng rng(1);
  for (int trial = 0; trial < 3; ++trial) {
    Conv2d conv("c", 2, 3, 3);
    ParameterList ps;
    conv.collect(ps);
    randomize(ps, rng);
    CHECK(check_for(conv, ps).run(random_tensor({2, 2, 6, 6}, rng), rng) <= kGradTol);
  }
}

TEST_CASE("conv 1x1 gradients match central differences") {
  Rng rng(2);
  Conv2d conv("c", 3, 2, 1);
  ParameterList ps;
  conv.collect(ps);
  randomize(ps, rng);
  CHECK(check_for(conv, ps).run(random_tensor({2, 3, 4, 5}, rng), rng) <= kGradTol);
}

TEST_CASE("conv matches a direct convolution oracle") {
  Rng rng(3);
  Conv2d conv("c", 2, 3, 3);
  ParameterList ps;
  conv.collect(ps);
  randomize(ps, rng);
  const Tensor x = random_tensor({1, 2, 5, 4}, rng);
  const Tensor y = conv.forward(x, Mode::eval);
  REQUIRE(y.shape() == Shape{1, 3, 5, 4});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double s = conv.bias.value[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int a = int(i) + di, b = int(j) + dj;
              if (a < 0 || b < 0 || a >= 5 || b >= 4) continue;
              s += conv.weight.value.at({o, c, std::size_t(di + 1), std::size_t(dj + 1)}) *
                   x.at({0, c, std::size_t(a), std::size_t(b)});
            }
        CHECK(y.at({0, o, i, j}) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("transpose conv gradients and output placement") {
  Rng rng(4);
  TransposeConv2x2 up("u", 3, 2);
  ParameterList ps;
  up.collect(ps);
  randomize(ps, rng);
  CHECK(check_for(up, ps).run(random_tensor({2, 3, 3, 4}, rng), rng) <= kGradTol);

  const Tensor x = random_tensor({1, 3, 2, 2}, rng);
  const Tensor y = up.forward(x, Mode::eval);
  REQUIRE(y.shape() == Shape{1, 2, 4, 4});
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double s = up.bias.value[o];
        for (std::size_t c = 0; c < 3; ++c) {
          s += x.at({0, c, i / 2, j / 2}) * up.weight.value.at({c, o, i % 2, j % 2});
        }
        CHECK(y.at({0, o, i, j}) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("batch norm gradients in training mode") {
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    BatchNorm2d bn("bn", 3);
    ParameterList ps;
    bn.collect(ps);
    randomize(ps, rng);
    CHECK(check_for(bn, ps).run(random_tensor({3, 3, 3, 3}, rng), rng) <= kGradTol);
  }
}

TEST_CASE("batch norm normalizes per channel and tracks running statistics") {
  Rng rng(6);
  BatchNorm2d bn("bn", 2);
  const Tensor x = random_tensor({4, 2, 3, 3}, rng, 2.0, 5.0);
  const Tensor y = bn.forward(x, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0, xmean = 0.0, xsq = 0.0;
    const double n = 4 * 9;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < 9; ++p) {
        const double v = y.slab({b, c})[p], u = x.slab({b, c})[p];
        mean += v / n;
        var += v * v / n;
        xmean += u / n;
        xsq += u * u;
      }
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    const double unbiased = (xsq - n * xmean * xmean) / (n - 1);
    CHECK(bn.running_mean.value[c] == doctest::Approx(0.1 * xmean).epsilon(1e-12));
    CHECK(bn.running_var.value[c] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  }
  CHECK_FALSE(bn.running_mean.trainable);
}

TEST_CASE("sigmoid derivative is s(1-s) and its head maps 0 to 0.5") {
  Rng rng(7);
  Sigmoid sig;
  CHECK(check_for(sig).run(random_tensor({2, 1, 3, 3}, rng, -4, 4), rng) <= kGradTol);
  const Tensor x = random_tensor({1, 1, 2, 2}, rng, -3, 3);
  const Tensor y = sig.forward(x, Mode::train);
  const Tensor g = sig.backward(Tensor({1, 1, 2, 2}, std::vector<double>(4, 1.0)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(y[i] * (1 - y[i])));
  CHECK(sig.forward(Tensor({1, 1, 1, 1}), Mode::eval)[0] == 0.5);
  const Tensor big = sig.forward(Tensor({1, 1, 1, 2}, {-800.0, 800.0}), Mode::eval);
  CHECK(big[0] >= 0.0);
  CHECK(big[1] <= 1.0);
}

TEST_CASE("relu passes gradients through positive inputs unchanged") {
  Rng rng(8);
  Relu relu;
  const Tensor x = random_tensor({1, 2, 3, 3}, rng, 0.1, 2.0);
  CHECK(relu.forward(x, Mode::train) == x);
  const Tensor g = random_tensor({1, 2, 3, 3}, rng);
  CHECK(relu.backward(g) == g);
  Tensor neg = x * -1.0;
  relu.forward(neg, Mode::train);
  const Tensor gx = relu.backward(g);
  for (double v : gx.values()) CHECK(v == 0.0);
}

TEST_CASE("max pool routes gradients to the window maximum") {
  Rng rng(9);
  MaxPool2 pool;
  CHECK(check_for(pool).run(random_tensor({2, 2, 4, 6}, rng), rng) <= kGradTol);
  const Tensor x({1, 1, 2, 2}, {0.1, 0.9, 0.3, 0.2});
  CHECK(pool.forward(x, Mode::train)[0] == 0.9);
  const Tensor g = pool.backward(Tensor({1, 1, 1, 1}, {2.0}));
  CHECK(g == Tensor({1, 1, 2, 2}, {0.0, 2.0, 0.0, 0.0}));
  CHECK_THROWS_AS(pool.forward(Tensor({1, 1, 3, 2}), Mode::eval), std::invalid_argument);
}

TEST_CASE("conv block gradients without batch norm") {
  Rng rng(10);
  ConvBlock block("b", 2, 3, false);
  block.init(rng);
  ParameterList ps;
  block.collect(ps);
  CHECK(check_for(block, ps).run(random_tensor({2, 2, 4, 4}, rng), rng) <= kGradTol);
}

TEST_CASE("channel concat and split are inverse") {
  Rng rng(11);
  const Tensor a = random_tensor({2, 3, 2, 2}, rng), b = random_tensor({2, 1, 2, 2}, rng);
  const Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 4, 2, 2});
  CHECK(c.at({1, 3, 1, 0}) == b.at({1, 0, 1, 0}));
  const auto [ga, gb] = split_channels(c, 3);
  CHECK(ga == a);
  CHECK(gb == b);
  CHECK_THROWS_AS(concat_channels(a, random_tensor({1, 1, 2, 2}, rng)), std::invalid_argument);
}

TEST_CASE("backward before a recorded forward is an error") {
  Conv2d conv("c", 1, 1, 3);
  CHECK_THROWS_AS(conv.backward(Tensor({1, 1, 2, 2})), std::logic_error);
  Conv2d conv2("c", 1, 1, 3);
  conv2.forward(Tensor({1, 1, 2, 2}), Mode::eval);
  CHECK_THROWS_AS(conv2.backward(Tensor({1, 1, 2, 2})), std::logic_error);
  BatchNorm2d bn("bn", 1);
  CHECK_THROWS_AS(bn.backward(Tensor({1, 1, 2, 2})), std::logic_error);
  Sigmoid sig;
  CHECK_THROWS_AS(sig.backward(Tensor({1})), std::logic_error);
}

TEST_CASE("conv rejects channel mismatch with expected and actual shapes") {
  Conv2d conv("c", 3, 1, 3);
  try {
    conv.forward(Tensor({1, 2, 4, 4}), Mode::eval);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("(1, 2, 4, 4)") != std::string::npos);
  }
}

TEST_CASE("kaiming init respects the fan-in bound") {
  Rng rng(12);
  Conv2d conv("c", 4, 8, 3);
  conv.init(rng);
  const double bound = std::sqrt(6.0 / (4 * 9));
  double largest = 0.0;
  for (double v : conv.weight.value.values()) largest = std::max(largest, std::abs(v));
  CHECK(largest <= bound);
  CHECK(largest > 0.5 * bound);
  for (double v : conv.bias.value.values()) CHECK(v == 0.0);
}
