#pragma once

// Convolutional building blocks with hand-written backward passes. All
// feature maps are rank-4 (items, channels, height, width); the leading axis
// stacks timestamps, edges and minibatch samples alike.
//
// Usage contract for every layer: forward(x, Mode::train) records what
// backward needs; backward(gy) accumulates into the parameter gradients and
// returns the input gradient. backward before a training-mode forward throws.

#include <string>
#include <vector>

#include "ucd/rng.hpp"
#include "ucd/tensor.hpp"

namespace ucd {

enum class Mode { train, eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool train = true)
      : name(std::move(n)), value(shape), grad(shape), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParameterList = std::vector<Parameter*>;

// Kaiming-uniform (ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  Parameter weight;  // (out, in, k, k)
  Parameter bias;    // (out)

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 3, pad_ = 1;
  Tensor input_;
  bool recorded_ = false;
};

// 2x2 kernel, stride 2: doubles height and width.
class TransposeConv2x2 {
 public:
  TransposeConv2x2() = default;
  TransposeConv2x2(const std::string& name, std::size_t in, std::size_t out);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }

  Parameter weight;  // (in, out, 2, 2)
  Parameter bias;    // (out)

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor input_;
  bool recorded_ = false;
};

// Per-channel normalization over (items, height, width). Training mode uses
// batch statistics (biased variance) and updates the running estimates with
// momentum 0.1 (unbiased variance); eval mode uses the running estimates.
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void collect(ParameterList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
  }

  Parameter gamma, beta;
  Parameter running_mean, running_var;  // buffers, not trainable

 private:
  Tensor xhat_;
  std::vector<double> inv_std_;
  Mode mode_ = Mode::eval;
  bool recorded_ = false;
};

class Relu {
 public:
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

 private:
  std::vector<bool> active_;
  bool recorded_ = false;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

 private:
  Tensor output_;
  bool recorded_ = false;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
  bool recorded_ = false;
};

// [3x3 conv, batch norm, ReLU] x 2. Batch norm becomes identity when disabled.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, std::size_t in, std::size_t out,
            bool batchnorm);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng) { conv1_.init(rng); conv2_.init(rng); }
  void collect(ParameterList& out);

 private:
  bool batchnorm_ = true;
  Conv2d conv1_, conv2_;
  BatchNorm2d bn1_, bn2_;
  Relu relu1_, relu2_;
};

// Channel concatenation of two maps with equal items/height/width.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a gradient of concat_channels(a, b) into its two parts.
std::pair<Tensor, Tensor> split_channels(const Tensor& g, std::size_t channels_a);

}  // namespace ucd
