#pragma once

#include <vector>

#include "ucd/layers.hpp"

namespace ucd {

struct BackboneConfig {
  std::size_t scales = 3;      // S
  std::size_t base_width = 8;  // B; scale s carries B * 2^s features
  std::size_t in_channels = 3;
  bool use_batchnorm = true;

  std::size_t width(std::size_t scale) const { return base_width << scale; }
  // Height/width must be divisible by this.
  std::size_t divisor() const { return std::size_t{1} << (scales - 1); }
  void validate() const;
  void validate_input(std::size_t height, std::size_t width) const;
};

// One (items, B * 2^s, H / 2^s, W / 2^s) map per scale s.
struct FeaturePyramid {
  std::vector<Tensor> levels;

  std::size_t scales() const { return levels.size(); }
  std::size_t items() const { return levels.empty() ? 0 : levels.front().dim(0); }
  Tensor& operator[](std::size_t s) { return levels[s]; }
  const Tensor& operator[](std::size_t s) const { return levels[s]; }
};

// Throws unless every level obeys H^s * 2^s = H, W^s * 2^s = W, D^s = B * 2^s.
void check_pyramid(const FeaturePyramid& pyr, const BackboneConfig& cfg,
                   std::size_t height, std::size_t width);

// Shared-weight U-Net contracting path. Every item on the leading axis is
// encoded independently with the same parameters (batch norm statistics
// aside); the level s map is captured before the s-th pooling.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& name, const BackboneConfig& cfg);

  FeaturePyramid forward(const Tensor& x, Mode mode);
  // Gradients w.r.t. each pyramid level; returns the input gradient.
  Tensor backward(const FeaturePyramid& grads);

  void init(Rng& rng);
  void collect(ParameterList& out);

 private:
  BackboneConfig cfg_;
  std::vector<ConvBlock> blocks_;
  std::vector<MaxPool2> pools_;
};

// U-Net expansive path: S-1 upsampling blocks (transpose conv, skip concat,
// conv block), then a 1x1 conv and sigmoid. Output is (items, H, W).
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& name, const BackboneConfig& cfg);

  Tensor forward(const FeaturePyramid& pyr, Mode mode);
  FeaturePyramid backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out);

 private:
  BackboneConfig cfg_;
  std::vector<TransposeConv2x2> ups_;  // ups_[s] maps scale s+1 -> s
  std::vector<ConvBlock> blocks_;      // blocks_[s] at scale s
  Conv2d head_;
  Sigmoid sigmoid_;
  Shape out_shape_;
};

}  // namespace ucd
