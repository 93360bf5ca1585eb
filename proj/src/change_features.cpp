#include "ucd/change_features.hpp"

#include <stdexcept>

namespace ucd {

namespace {

std::size_t item_size(const Tensor& t) { return t.size() / t.dim(0); }

}  // namespace

Tensor change_features(const Tensor& level, std::size_t batch, const EdgeSet& edges) {
  if (level.rank() < 1 || batch == 0 || level.dim(0) != batch * edges.length()) {
    throw std::invalid_argument("change features: " + shape_str(level.shape()) +
                                " does not hold " + std::to_string(batch) + " x " +
                                std::to_string(edges.length()) + " timestamps");
  }
  const std::size_t len = edges.length(), n = edges.size(), stride = item_size(level);
  Shape shape = level.shape();
  shape[0] = batch * n;
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t e = 0; e < n; ++e) {
      const double* later = level.data() + (b * len + edges[e].later) * stride;
      const double* earlier = level.data() + (b * len + edges[e].earlier) * stride;
      double* dst = out.data() + (b * n + e) * stride;
      for (std::size_t i = 0; i < stride; ++i) dst[i] = later[i] - earlier[i];
    }
  }
  return out;
}

Tensor change_features_backward(const Tensor& grad, std::size_t batch,
                                const EdgeSet& edges) {
  const std::size_t len = edges.length(), n = edges.size();
  if (grad.rank() < 1 || grad.dim(0) != batch * n) {
    throw std::invalid_argument("change features backward: edge count mismatch");
  }
  const std::size_t stride = item_size(grad);
  Shape shape = grad.shape();
  shape[0] = batch * len;
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t e = 0; e < n; ++e) {
      const double* g = grad.data() + (b * n + e) * stride;
      double* later = out.data() + (b * len + edges[e].later) * stride;
      double* earlier = out.data() + (b * len + edges[e].earlier) * stride;
      for (std::size_t i = 0; i < stride; ++i) {
        later[i] += g[i];
        earlier[i] -= g[i];
      }
    }
  }
  return out;
}

FeaturePyramid change_pyramid(const FeaturePyramid& refined, const EdgeSet& edges,
                              std::size_t batch) {
  FeaturePyramid out;
  for (const Tensor& level : refined.levels) {
    out.levels.push_back(change_features(level, batch, edges));
  }
  return out;
}

FeaturePyramid change_pyramid_backward(const FeaturePyramid& grads, const EdgeSet& edges,
                                       std::size_t batch) {
  FeaturePyramid out;
  for (const Tensor& level : grads.levels) {
    out.levels.push_back(change_features_backward(level, batch, edges));
  }
  return out;
}

}  // namespace ucd
