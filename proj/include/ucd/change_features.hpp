#pragma once

// Parameter-free change features: for every edge (t, k) and scale, the
// refined map at k minus the refined map at t.

#include "ucd/backbone.hpp"
#include "ucd/edges.hpp"

namespace ucd {

// level: (batch * T, ...) with samples stacked in timestamp order.
// Returns (batch * N, ...) with edges in EdgeSet order.
Tensor change_features(const Tensor& level, std::size_t batch, const EdgeSet& edges);

// Adjoint of change_features: scatters per-edge gradients back to timestamps.
Tensor change_features_backward(const Tensor& grad, std::size_t batch,
                                const EdgeSet& edges);

FeaturePyramid change_pyramid(const FeaturePyramid& refined, const EdgeSet& edges,
                              std::size_t batch = 1);
FeaturePyramid change_pyramid_backward(const FeaturePyramid& grads, const EdgeSet& edges,
                                       std::size_t batch = 1);

}  // namespace ucd
