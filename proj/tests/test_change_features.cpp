#include <doctest.h>

#include "support.hpp"
#include "ucd/change_features.hpp"
#include "ucd/json_io.hpp"

using namespace ucd;
using testing::random_tensor;

namespace {

// Feature map of timestamp t within sample b of a (batch * T, ...) level.
Tensor item(const Tensor& level, std::size_t i) {
  Shape s(level.shape().begin() + 1, level.shape().end());
  const std::size_t n = shape_size(s);
  return Tensor(s, std::vector<double>(level.data() + i * n, level.data() + (i + 1) * n));
}

}  // namespace

TEST_CASE("edge counts follow the closed forms") {
  for (std::size_t t = 2; t <= 12; ++t) {
    CHECK(EdgeSet(EdgeKind::adjacent, t).size() == t - 1);
    CHECK(EdgeSet(EdgeKind::cyclic, t).size() == (t == 2 ? 1 : t));
    CHECK(EdgeSet(EdgeKind::dense, t).size() == t * (t - 1) / 2);
  }
  CHECK(EdgeSet(EdgeKind::dense, 5).size() == 10);
  CHECK(EdgeSet(EdgeKind::adjacent, 5).size() == 4);
  CHECK(EdgeSet(EdgeKind::cyclic, 5).size() == 5);
}

TEST_CASE("short series collapse the edge kinds") {
  for (EdgeKind k : {EdgeKind::adjacent, EdgeKind::cyclic, EdgeKind::dense}) {
    CHECK(EdgeSet(k, 2).edges() == std::vector<Edge>{{0, 1}});
  }
  CHECK(EdgeSet(EdgeKind::cyclic, 3).edges() == EdgeSet(EdgeKind::dense, 3).edges());
  CHECK_THROWS_AS(EdgeSet(EdgeKind::dense, 1), std::invalid_argument);
}

TEST_CASE("edges are sorted, unique and well formed") {
  for (EdgeKind k : {EdgeKind::adjacent, EdgeKind::cyclic, EdgeKind::dense})
    for (std::size_t t = 2; t <= 8; ++t) {
      const EdgeSet es(k, t);
      for (std::size_t n = 0; n < es.size(); ++n) {
        CHECK(es[n].earlier < es[n].later);
        CHECK(es[n].later < t);
        if (n) CHECK(es[n - 1] < es[n]);
        CHECK(es.index_of(es[n]) == n);
      }
    }
  const EdgeSet cyc(EdgeKind::cyclic, 4);
  CHECK(cyc.edges() == std::vector<Edge>{{0, 1}, {0, 3}, {1, 2}, {2, 3}});
  CHECK(EdgeSet(EdgeKind::dense, 4).contains(cyc));
  CHECK_FALSE(EdgeSet(EdgeKind::adjacent, 4).contains(cyc));
  CHECK_FALSE(cyc.index_of({1, 3}).has_value());
}

TEST_CASE("edge kinds parse and serialize") {
  CHECK(parse_edge_kind("cyclic") == EdgeKind::cyclic);
  CHECK_THROWS_AS(parse_edge_kind("ring"), std::invalid_argument);
  const EdgeSet es(EdgeKind::adjacent, 4);
  const json j = edges_to_json(es);
  CHECK(j["edges"].size() == 3);
  CHECK(edges_from_json(j).edges() == es.edges());
  json bad = j;
  bad["edges"][0] = {0, 2};
  CHECK_THROWS_AS(edges_from_json(bad), std::invalid_argument);
}

TEST_CASE("change features subtract earlier from later") {
  Rng rng(1);
  const std::size_t batch = 2, len = 4;
  const Tensor level = random_tensor({batch * len, 3, 2, 2}, rng);
  const EdgeSet es(EdgeKind::dense, len);
  const Tensor ch = change_features(level, batch, es);
  REQUIRE(ch.shape() == Shape{batch * es.size(), 3, 2, 2});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < es.size(); ++n) {
      const Tensor want = item(level, b * len + es[n].later) - item(level, b * len + es[n].earlier);
      CHECK(item(ch, b * es.size() + n) == want);
    }
}

TEST_CASE("identical timestamps give zero change features") {
  Rng rng(2);
  Tensor level = random_tensor({3, 2, 2, 2}, rng);
  std::copy_n(level.slab({0}), 8, level.slab({2}));
  const Tensor ch = change_features(level, 1, EdgeSet(EdgeKind::dense, 3));
  const Tensor zero = item(ch, 1);
  for (double v : zero.values()) CHECK(v == 0.0);
}

TEST_CASE("change feature backward is the adjoint") {
  Rng rng(3);
  const std::size_t batch = 2, len = 5;
  const EdgeSet es(EdgeKind::cyclic, len);
  const Tensor x = random_tensor({batch * len, 2, 3, 1}, rng);
  const Tensor g = random_tensor({batch * es.size(), 2, 3, 1}, rng);
  const double lhs = testing::dot(change_features(x, batch, es), g);
  const double rhs = testing::dot(x, change_features_backward(g, batch, es));
  CHECK(std::abs(lhs - rhs) <= 1e-12);
}

TEST_CASE("change pyramids cover every scale and reject mismatched items") {
  Rng rng(4);
  FeaturePyramid pyr{{random_tensor({4, 2, 4, 4}, rng), random_tensor({4, 4, 2, 2}, rng)}};
  const FeaturePyramid ch = change_pyramid(pyr, EdgeSet(EdgeKind::dense, 4));
  CHECK(ch.scales() == 2);
  CHECK(ch[1].shape() == Shape{6, 4, 2, 2});
  CHECK_THROWS_AS(change_features(pyr[0], 1, EdgeSet(EdgeKind::dense, 5)),
                  std::invalid_argument);
}
