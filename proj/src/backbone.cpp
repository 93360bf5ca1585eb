#include "ucd/backbone.hpp"

#include <stdexcept>

namespace ucd {

void BackboneConfig::validate() const {
  if (scales < 2) throw std::invalid_argument("backbone needs at least 2 scales");
  if (base_width < 2) throw std::invalid_argument("backbone base width must be >= 2");
  if (in_channels < 1) throw std::invalid_argument("backbone needs input channels");
}

void BackboneConfig::validate_input(std::size_t height, std::size_t w) const {
  if (height % divisor() || w % divisor() || height == 0 || w == 0) {
    throw std::invalid_argument("input " + std::to_string(height) + "x" +
                                std::to_string(w) + " not divisible by " +
                                std::to_string(divisor()));
  }
}

void check_pyramid(const FeaturePyramid& pyr, const BackboneConfig& cfg,
                   std::size_t height, std::size_t w) {
  if (pyr.scales() != cfg.scales) {
    throw std::invalid_argument("pyramid has " + std::to_string(pyr.scales()) +
                                " levels, expected " + std::to_string(cfg.scales));
  }
  for (std::size_t s = 0; s < cfg.scales; ++s) {
    const Tensor& f = pyr[s];
    require_rank(f, 4, "pyramid level");
    if (f.dim(1) != cfg.width(s) || (f.dim(2) << s) != height || (f.dim(3) << s) != w ||
        f.dim(0) != pyr.items()) {
      throw std::invalid_argument("pyramid level " + std::to_string(s) + " has shape " +
                                  shape_str(f.shape()) + ", expected (" +
                                  std::to_string(pyr.items()) + ", " +
                                  std::to_string(cfg.width(s)) + ", " +
                                  std::to_string(height >> s) + ", " +
                                  std::to_string(w >> s) + ")");
    }
  }
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const std::string& name, const BackboneConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  blocks_.emplace_back(name + ".block0", cfg.in_channels, cfg.width(0), cfg.use_batchnorm);
  for (std::size_t s = 1; s < cfg.scales; ++s) {
    blocks_.emplace_back(name + ".block" + std::to_string(s), cfg.width(s - 1),
                         cfg.width(s), cfg.use_batchnorm);
  }
  pools_.resize(cfg.scales - 1);
}

void Encoder::init(Rng& rng) {
  for (auto& b : blocks_) b.init(rng);
}

void Encoder::collect(ParameterList& out) {
  for (auto& b : blocks_) b.collect(out);
}

FeaturePyramid Encoder::forward(const Tensor& x, Mode mode) {
  require_rank(x, 4, "Encoder");
  if (x.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument("encoder expects " + std::to_string(cfg_.in_channels) +
                                " channels, got " + shape_str(x.shape()));
  }
  cfg_.validate_input(x.dim(2), x.dim(3));
  FeaturePyramid pyr;
  pyr.levels.push_back(blocks_[0].forward(x, mode));
  for (std::size_t s = 1; s < cfg_.scales; ++s) {
    Tensor pooled = pools_[s - 1].forward(pyr.levels.back(), mode);
    pyr.levels.push_back(blocks_[s].forward(pooled, mode));
  }
  return pyr;
}

Tensor Encoder::backward(const FeaturePyramid& grads) {
  if (grads.scales() != cfg_.scales) throw std::invalid_argument("encoder backward: scale count");
  Tensor g = grads[cfg_.scales - 1];
  for (std::size_t s = cfg_.scales - 1; s > 0; --s) {
    g = pools_[s - 1].backward(blocks_[s].backward(g));
    g += grads[s - 1];
  }
  return blocks_[0].backward(g);
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const std::string& name, const BackboneConfig& cfg)
    : cfg_(cfg), head_(name + ".head", cfg.width(0), 1, 1) {
  cfg.validate();
  for (std::size_t s = 0; s + 1 < cfg.scales; ++s) {
    ups_.emplace_back(name + ".up" + std::to_string(s), cfg.width(s + 1), cfg.width(s));
    blocks_.emplace_back(name + ".block" + std::to_string(s), 2 * cfg.width(s),
                         cfg.width(s), cfg.use_batchnorm);
  }
}

void Decoder::init(Rng& rng) {
  for (std::size_t s = 0; s < ups_.size(); ++s) {
    ups_[s].init(rng);
    blocks_[s].init(rng);
  }
  head_.init(rng);
}

void Decoder::collect(ParameterList& out) {
  for (std::size_t s = 0; s < ups_.size(); ++s) {
    ups_[s].collect(out);
    blocks_[s].collect(out);
  }
  head_.collect(out);
}

Tensor Decoder::forward(const FeaturePyramid& pyr, Mode mode) {
  if (pyr.scales() != cfg_.scales) {
    throw std::invalid_argument("decoder expects " + std::to_string(cfg_.scales) +
                                " skip scales, got " + std::to_string(pyr.scales()));
  }
  for (std::size_t s = 1; s < pyr.scales(); ++s) {
    if (pyr[s].dim(0) != pyr[0].dim(0)) {
      throw std::invalid_argument("decoder: item count differs across scales");
    }
  }
  check_pyramid(pyr, cfg_, pyr[0].dim(2), pyr[0].dim(3));
  Tensor x = pyr[cfg_.scales - 1];
  for (std::size_t s = cfg_.scales - 1; s-- > 0;) {
    Tensor up = ups_[s].forward(x, mode);
    x = blocks_[s].forward(concat_channels(up, pyr[s]), mode);
  }
  Tensor y = sigmoid_.forward(head_.forward(x, mode), mode);
  out_shape_ = {y.dim(0), y.dim(2), y.dim(3)};
  return y.reshaped(out_shape_);
}

FeaturePyramid Decoder::backward(const Tensor& gy) {
  if (gy.shape() != out_shape_) throw std::invalid_argument("decoder backward: shape mismatch");
  Tensor g = head_.backward(
      sigmoid_.backward(gy.reshaped({out_shape_[0], 1, out_shape_[1], out_shape_[2]})));
  FeaturePyramid grads;
  grads.levels.resize(cfg_.scales);
  for (std::size_t s = 0; s + 1 < cfg_.scales; ++s) {
    auto [g_up, g_skip] = split_channels(blocks_[s].backward(g), cfg_.width(s));
    grads[s] = std::move(g_skip);
    g = ups_[s].backward(g_up);
  }
  grads[cfg_.scales - 1] = std::move(g);
  return grads;
}

}  // namespace ucd
