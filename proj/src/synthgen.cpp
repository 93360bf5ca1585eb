#include "ucd/synthgen.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ucd/mti.hpp"
#include "ucd/objective.hpp"
#include "ucd/rng.hpp"

namespace ucd {

void SceneSpec::validate() const {
  if (length < 2) throw std::invalid_argument("scene needs T >= 2");
  if (height < 2 || width < 2) throw std::invalid_argument("scene extent must be >= 2 px");
  if (channels < 1) throw std::invalid_argument("scene needs at least one channel");
  if (min_extent < 2 || max_extent < min_extent) {
    throw std::invalid_argument("building extents must satisfy 2 <= min <= max");
  }
  if (buildings > 0 && (max_extent > height || max_extent > width)) {
    throw std::invalid_argument("building extent " + std::to_string(max_extent) +
                                " exceeds scene " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(illumination_jitter >= 0.0)) throw std::invalid_argument("illumination jitter must be >= 0");
  if (!(demolition_rate >= 0.0 && demolition_rate <= 1.0)) {
    throw std::invalid_argument("demolition rate must lie in [0, 1]");
  }
}

Tensor Scene::change_label(std::size_t t, std::size_t k) const {
  return xor_maps(slice_map(seg_labels, t), slice_map(seg_labels, k));
}

Tensor Scene::change_labels(const EdgeSet& edges) const {
  if (edges.length() != length()) {
    throw std::invalid_argument("edge set length does not match scene");
  }
  const std::size_t plane = seg_labels.dim(1) * seg_labels.dim(2);
  Tensor out({edges.size(), seg_labels.dim(1), seg_labels.dim(2)});
  for (std::size_t n = 0; n < edges.size(); ++n) {
    const Tensor c = change_label(edges[n].earlier, edges[n].later);
    std::copy(c.values().begin(), c.values().end(), out.data() + n * plane);
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t len = spec.length, ch = spec.channels, h = spec.height, w = spec.width;
  const std::size_t plane = h * w;

  // Static background: per-channel base, a low-frequency pattern and fixed grain.
  Tensor background({ch, h, w});
  const double fy = rng.uniform(0.05, 0.3), fx = rng.uniform(0.05, 0.3);
  const double phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
  const double phase_x = rng.uniform(0.0, 2 * std::numbers::pi);
  for (std::size_t c = 0; c < ch; ++c) {
    const double base = rng.uniform(0.2, 0.35);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        background[c * plane + y * w + x] =
            base + 0.06 * std::sin(fy * double(y) + phase_y) * std::cos(fx * double(x) + phase_x) +
            0.03 * rng.normal();
      }
  }

  Scene scene;
  scene.spec = spec;
  std::vector<std::vector<double>> colors;
  for (std::size_t b = 0; b < spec.buildings; ++b) {
    Building bd;
    bd.rows = spec.min_extent + rng.below(spec.max_extent - spec.min_extent + 1);
    bd.cols = spec.min_extent + rng.below(spec.max_extent - spec.min_extent + 1);
    bd.top = rng.below(h - bd.rows + 1);
    bd.left = rng.below(w - bd.cols + 1);
    bd.built = rng.below(len);
    bd.demolished = len;
    if (spec.demolition_rate > 0.0 && rng.bernoulli(spec.demolition_rate) && bd.built + 1 < len) {
      bd.demolished = bd.built + 1 + rng.below(len - bd.built - 1);
    }
    std::vector<double> color(ch);
    for (auto& v : color) v = rng.uniform(0.65, 0.9);
    colors.push_back(std::move(color));
    scene.buildings.push_back(bd);
  }

  scene.seg_labels = Tensor({len, h, w});
  scene.images = Tensor({len, ch, h, w});
  for (std::size_t t = 0; t < len; ++t) {
    const double offset = rng.uniform(-spec.illumination_jitter, spec.illumination_jitter);
    Tensor frame = background;
    for (std::size_t b = 0; b < scene.buildings.size(); ++b) {
      const Building& bd = scene.buildings[b];
      if (!bd.present(t)) continue;
      for (std::size_t y = bd.top; y < bd.top + bd.rows; ++y)
        for (std::size_t x = bd.left; x < bd.left + bd.cols; ++x) {
          scene.seg_labels[t * plane + y * w + x] = 1.0;
          for (std::size_t c = 0; c < ch; ++c) frame[c * plane + y * w + x] = colors[b][c];
        }
    }
    double* img = scene.images.data() + t * ch * plane;
    for (std::size_t i = 0; i < ch * plane; ++i) {
      img[i] = std::clamp(frame[i] + offset + spec.noise_sigma * rng.normal(), 0.0, 1.0);
    }
  }
  return scene;
}

NoisyOutputs corrupt_to_probabilities(const Scene& scene, double seg_sigma, double change_sigma,
                                      std::uint64_t seed, EdgeKind kind) {
  if (!(seg_sigma >= 0.0) || !(change_sigma >= 0.0)) {
    throw std::invalid_argument("corruption sigmas must be >= 0");
  }
  Rng rng(seed);
  NoisyOutputs out{scene.seg_labels, scene.change_labels(EdgeSet(kind, scene.length())),
                   EdgeSet(kind, scene.length())};
  for (auto& v : out.seg.values()) v = clamp_probability(v + seg_sigma * rng.normal());
  for (auto& v : out.change.values()) v = clamp_probability(v + change_sigma * rng.normal());
  return out;
}

}  // namespace ucd
