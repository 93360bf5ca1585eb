#pragma once

// Temporal feature refinement: per spatial cell, the T feature vectors of a
// pyramid level form a sequence that receives sinusoidal temporal encodings
// and passes through pre-norm transformer encoder layers. Cells never
// interact; each scale owns its parameters.
//
// Sequence batches are rank-3 tensors (sequences, T, D).

#include <vector>

#include "ucd/backbone.hpp"
#include "ucd/layers.hpp"

namespace ucd {

struct TfrConfig {
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ff_multiplier = 4;
  bool temporal_encoding = true;

  void validate(std::size_t dim) const;
};

// PE(t, 2i) = sin(t / 10000^(2i/D)), PE(t, 2i+1) = cos(t / 10000^(2i/D)).
Tensor temporal_encoding(std::size_t length, std::size_t dim);

// Row-wise softmax of a (rows x cols) matrix.
void softmax_rows(RowMatrix<double>& m);

// x W + b on the last axis; W is (in, out).
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);  // Xavier-uniform weights, zero bias
  void collect(ParameterList& out);

  Parameter weight, bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = true;
  Tensor input_;
  bool recorded_ = false;
};

class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);
  void collect(ParameterList& out) { out.push_back(&gamma); out.push_back(&beta); }

  Parameter gamma, beta;

 private:
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool recorded_ = false;
};

// Multi-head self-attention over the T axis of each sequence. Per head i the
// projections are the column block i of query/key/value (D x D_head each);
// scores are scaled by 1 / sqrt(D_head); concatenated heads are projected by
// `output` (D x D). No projection biases.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t heads);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out);

  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return dim_ / heads_; }
  // Attention weights of the last forward, (sequences, heads, T, T).
  const Tensor& attention() const { return attn_; }

  Parameter query, key, value, output;

 private:
  std::size_t dim_ = 0, heads_ = 1;
  Tensor input_, q_, k_, v_, concat_, attn_;
  bool recorded_ = false;
};

// x + MHA(LN(x)), then + FFN(LN(.)) with FFN = Linear -> ReLU -> Linear.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, std::size_t dim, const TfrConfig& cfg);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out);

  MultiHeadAttention& attention() { return mha_; }
  Linear& ff_in() { return ff1_; }
  Linear& ff_out() { return ff2_; }

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention mha_;
  Linear ff1_, ff2_;
  Relu relu_;
};

// Refinement of one pyramid level.
class TemporalRefiner {
 public:
  TemporalRefiner() = default;
  TemporalRefiner(const std::string& name, std::size_t dim, const TfrConfig& cfg);

  // Sequence form: (sequences, T, D) -> (sequences, T, D).
  Tensor refine_sequences(const Tensor& seq, Mode mode);
  Tensor backward_sequences(const Tensor& gy);

  // Map form: (batch * T, D, H, W) with samples stacked along the leading
  // axis in timestamp order.
  Tensor forward(const Tensor& level, std::size_t batch, Mode mode);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParameterList& out);

  std::vector<EncoderLayer>& layers() { return layers_; }

 private:
  std::size_t dim_ = 0;
  TfrConfig cfg_;
  std::vector<EncoderLayer> layers_;
  Shape level_shape_;
  std::size_t batch_ = 0;
};

// Maps (batch * T, D, H, W) <-> (batch * H * W, T, D).
Tensor maps_to_sequences(const Tensor& level, std::size_t batch);
Tensor sequences_to_maps(const Tensor& seq, std::size_t batch, std::size_t height,
                         std::size_t width);

// One refiner per scale.
class Tfr {
 public:
  Tfr() = default;
  Tfr(const std::string& name, const BackboneConfig& backbone, const TfrConfig& cfg);

  FeaturePyramid forward(const FeaturePyramid& pyr, std::size_t batch, Mode mode);
  FeaturePyramid backward(const FeaturePyramid& grads);

  void init(Rng& rng);
  void collect(ParameterList& out);

  TemporalRefiner& scale(std::size_t s) { return refiners_[s]; }

 private:
  std::vector<TemporalRefiner> refiners_;
};

inline FeaturePyramid refine_pyramid(Tfr& tfr, const FeaturePyramid& pyr,
                                     std::size_t batch = 1) {
  return tfr.forward(pyr, batch, Mode::eval);
}

}  // namespace ucd
