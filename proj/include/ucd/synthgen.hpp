#pragma once

// Seeded synthetic urbanization scenes: axis-aligned rectangular buildings
// appear (and optionally disappear) over a time series rendered on a static
// textured background with per-timestamp illumination offsets and pixel noise.

#include <cstdint>

#include "ucd/edges.hpp"
#include "ucd/tensor.hpp"

namespace ucd {

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t length = 4;  // T
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::size_t buildings = 12;
  std::size_t min_extent = 4;
  std::size_t max_extent = 12;
  double noise_sigma = 0.05;
  double illumination_jitter = 0.1;  // offsets drawn from U(-j, j)
  double demolition_rate = 0.0;

  void validate() const;
};

struct Building {
  std::size_t top = 0, left = 0, rows = 0, cols = 0;
  std::size_t built = 0;       // first timestamp (zero-based) with the building
  std::size_t demolished = 0;  // first timestamp without it again; T if never

  bool present(std::size_t t) const { return t >= built && t < demolished; }
};

struct Scene {
  SceneSpec spec;
  Tensor images;      // (T, C, H, W) in [0, 1]
  Tensor seg_labels;  // (T, H, W) binary
  std::vector<Building> buildings;

  std::size_t length() const { return seg_labels.dim(0); }
  // seg_labels[t] XOR seg_labels[k].
  Tensor change_label(std::size_t t, std::size_t k) const;
  // (N, H, W) ordered as `edges`.
  Tensor change_labels(const EdgeSet& edges) const;
};

Scene generate_scene(const SceneSpec& spec);

// Label-derived stand-ins for network outputs:
// prob = clamp(label + N(0, sigma), eps, 1 - eps), eps = 1e-6.
struct NoisyOutputs {
  Tensor seg;     // (T, H, W)
  Tensor change;  // (N, H, W)
  EdgeSet edges;
};

NoisyOutputs corrupt_to_probabilities(const Scene& scene, double seg_sigma, double change_sigma,
                                      std::uint64_t seed, EdgeKind kind = EdgeKind::dense);

}  // namespace ucd
