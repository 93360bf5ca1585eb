#include "ucd/tfr.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "ucd/parallel.hpp"

namespace ucd {

namespace {

void require_recorded(bool recorded, const char* layer) {
  if (!recorded) {
    throw std::logic_error(std::string(layer) +
                           ": backward requested before a training forward");
  }
}

std::size_t rows_of(const Tensor& x) { return x.size() / x.shape().back(); }

}  // namespace

void TfrConfig::validate(std::size_t dim) const {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("feature dim " + std::to_string(dim) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (ff_multiplier == 0) throw std::invalid_argument("feed-forward multiplier must be >= 1");
}

Tensor temporal_encoding(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) {
    throw std::invalid_argument("temporal encoding needs an even dim, got " +
                                std::to_string(dim));
  }
  Tensor pe({length, dim});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          double(t) / std::pow(10000.0, double(2 * i) / double(dim));
      pe.at({t, 2 * i}) = std::sin(angle);
      pe.at({t, 2 * i + 1}) = std::cos(angle);
    }
  }
  return pe;
}

void softmax_rows(RowMatrix<double>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

// ----------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias)
    : weight(name + ".weight", {in, out}),
      bias(name + ".bias", {out}),
      in_(in),
      out_(out),
      has_bias_(bias) {}

void Linear::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / double(in_ + out_));
  for (auto& v : weight.value.values()) v = rng.uniform(-bound, bound);
  bias.value.fill(0.0);
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

Tensor Linear::forward(const Tensor& x, Mode mode) {
  if (x.rank() == 0 || x.shape().back() != in_) {
    throw std::invalid_argument("Linear: expected last axis " + std::to_string(in_) +
                                ", got " + shape_str(x.shape()));
  }
  const std::size_t rows = rows_of(x);
  Shape shape = x.shape();
  shape.back() = out_;
  Tensor y(shape);
  auto ym = y.matrix(0, rows, out_);
  ym.noalias() = x.matrix(0, rows, in_) * weight.value.matrix(0, in_, out_);
  if (has_bias_) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value.data(), Eigen::Index(out_));
  }
  recorded_ = mode == Mode::train;
  if (recorded_) input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  require_recorded(recorded_, "Linear");
  const std::size_t rows = rows_of(input_);
  if (gy.size() != rows * out_) throw std::invalid_argument("Linear::backward: size mismatch");
  const auto g = gy.matrix(0, rows, out_);
  weight.grad.matrix(0, in_, out_).noalias() += input_.matrix(0, rows, in_).transpose() * g;
  if (has_bias_) {
    Eigen::Map<Eigen::RowVectorXd>(bias.grad.data(), Eigen::Index(out_)) += g.colwise().sum();
  }
  Tensor gx = Tensor::zeros_like(input_);
  gx.matrix(0, rows, in_).noalias() = g * weight.value.matrix(0, in_, out_).transpose();
  return gx;
}

// -------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, std::size_t dim)
    : gamma(name + ".gamma", {dim}), beta(name + ".beta", {dim}) {
  gamma.value.fill(1.0);
}

Tensor LayerNorm::forward(const Tensor& x, Mode mode) {
  const std::size_t dim = gamma.value.size();
  if (x.rank() == 0 || x.shape().back() != dim) {
    throw std::invalid_argument("LayerNorm: expected last axis " + std::to_string(dim));
  }
  const std::size_t rows = rows_of(x);
  Tensor y = Tensor::zeros_like(x);
  recorded_ = mode == Mode::train;
  if (recorded_) {
    xhat_ = Tensor::zeros_like(x);
    inv_std_.assign(rows, 0.0);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * dim;
    double mean = 0.0;
    for (std::size_t d = 0; d < dim; ++d) mean += xr[d];
    mean /= double(dim);
    double var = 0.0;
    for (std::size_t d = 0; d < dim; ++d) var += (xr[d] - mean) * (xr[d] - mean);
    var /= double(dim);
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t d = 0; d < dim; ++d) {
      const double xh = (xr[d] - mean) * inv;
      y[r * dim + d] = gamma.value[d] * xh + beta.value[d];
      if (recorded_) xhat_[r * dim + d] = xh;
    }
    if (recorded_) inv_std_[r] = inv;
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& gy) {
  require_recorded(recorded_, "LayerNorm");
  gy.require_same_shape(xhat_);
  const std::size_t dim = gamma.value.size();
  const std::size_t rows = rows_of(gy);
  Tensor gx = Tensor::zeros_like(gy);
  std::vector<double> gh(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = gy.data() + r * dim;
    const double* xh = xhat_.data() + r * dim;
    double sum_gh = 0.0, sum_ghx = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      gamma.grad[d] += g[d] * xh[d];
      beta.grad[d] += g[d];
      gh[d] = g[d] * gamma.value[d];
      sum_gh += gh[d];
      sum_ghx += gh[d] * xh[d];
    }
    const double scale = inv_std_[r] / double(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      gx[r * dim + d] = scale * (double(dim) * gh[d] - sum_gh - xh[d] * sum_ghx);
    }
  }
  return gx;
}

// ----------------------------------------------------- MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t dim,
                                       std::size_t heads)
    : query(name + ".query", {dim, dim}),
      key(name + ".key", {dim, dim}),
      value(name + ".value", {dim, dim}),
      output(name + ".output", {dim, dim}),
      dim_(dim),
      heads_(heads) {
  if (heads == 0 || dim % heads) {
    throw std::invalid_argument("attention dim not divisible by heads");
  }
}

void MultiHeadAttention::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / double(2 * dim_));
  for (Parameter* p : {&query, &key, &value, &output})
    for (auto& v : p->value.values()) v = rng.uniform(-bound, bound);
}

void MultiHeadAttention::collect(ParameterList& out) {
  out.push_back(&query);
  out.push_back(&key);
  out.push_back(&value);
  out.push_back(&output);
}

Tensor MultiHeadAttention::forward(const Tensor& x, Mode mode) {
  const bool single = x.rank() == 2;
  const Tensor seq = single ? x.reshaped({1, x.dim(0), x.dim(1)}) : x;
  require_rank(seq, 3, "MultiHeadAttention");
  if (seq.dim(2) != dim_) {
    throw std::invalid_argument("MultiHeadAttention: expected dim " + std::to_string(dim_) +
                                ", got " + shape_str(x.shape()));
  }
  const std::size_t m = seq.dim(0), len = seq.dim(1), rows = m * len;
  const std::size_t hd = head_dim();
  const double scale = 1.0 / std::sqrt(double(hd));

  Tensor q(seq.shape()), k(seq.shape()), v(seq.shape()), concat(seq.shape());
  const auto xm = seq.matrix(0, rows, dim_);
  q.matrix(0, rows, dim_).noalias() = xm * query.value.matrix(0, dim_, dim_);
  k.matrix(0, rows, dim_).noalias() = xm * key.value.matrix(0, dim_, dim_);
  v.matrix(0, rows, dim_).noalias() = xm * value.value.matrix(0, dim_, dim_);
  Tensor attn({m, heads_, len, len});

  std::atomic<bool> finite{true};
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> scores;
    for (std::size_t s = begin; s < end; ++s) {
      const auto qs = q.matrix(s * len * dim_, len, dim_);
      const auto ks = k.matrix(s * len * dim_, len, dim_);
      const auto vs = v.matrix(s * len * dim_, len, dim_);
      auto cs = concat.matrix(s * len * dim_, len, dim_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto cols = Eigen::seqN(Eigen::Index(h * hd), Eigen::Index(hd));
        scores.noalias() = (qs(Eigen::all, cols) * ks(Eigen::all, cols).transpose()) * scale;
        if (!scores.allFinite()) {
          finite = false;
          continue;
        }
        softmax_rows(scores);
        attn.matrix((s * heads_ + h) * len * len, len, len) = scores;
        cs(Eigen::all, cols).noalias() = scores * vs(Eigen::all, cols);
      }
    }
  });
  if (!finite) {
    throw std::runtime_error("MultiHeadAttention: non-finite attention scores");
  }

  Tensor y(seq.shape());
  y.matrix(0, rows, dim_).noalias() =
      concat.matrix(0, rows, dim_) * output.value.matrix(0, dim_, dim_);

  recorded_ = mode == Mode::train;
  if (recorded_) {
    input_ = seq;
    q_ = std::move(q);
    k_ = std::move(k);
    v_ = std::move(v);
    concat_ = std::move(concat);
  }
  attn_ = std::move(attn);
  return single ? y.reshaped(x.shape()) : y;
}

Tensor MultiHeadAttention::backward(const Tensor& gy_in) {
  require_recorded(recorded_, "MultiHeadAttention");
  if (gy_in.size() != input_.size()) {
    throw std::invalid_argument("MultiHeadAttention::backward: size mismatch");
  }
  const Tensor gy = gy_in.reshaped(input_.shape());
  const std::size_t m = input_.dim(0), len = input_.dim(1), rows = m * len;
  const std::size_t hd = head_dim();
  const double scale = 1.0 / std::sqrt(double(hd));
  const auto g = gy.matrix(0, rows, dim_);

  output.grad.matrix(0, dim_, dim_).noalias() += concat_.matrix(0, rows, dim_).transpose() * g;
  Tensor gconcat(input_.shape());
  gconcat.matrix(0, rows, dim_).noalias() = g * output.value.matrix(0, dim_, dim_).transpose();

  Tensor gq(input_.shape()), gk(input_.shape()), gv(input_.shape());
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> ga, gs;
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t off = s * len * dim_;
      const auto qs = q_.matrix(off, len, dim_);
      const auto ks = k_.matrix(off, len, dim_);
      const auto vs = v_.matrix(off, len, dim_);
      const auto gc = gconcat.matrix(off, len, dim_);
      auto gqs = gq.matrix(off, len, dim_);
      auto gks = gk.matrix(off, len, dim_);
      auto gvs = gv.matrix(off, len, dim_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto cols = Eigen::seqN(Eigen::Index(h * hd), Eigen::Index(hd));
        const auto a = attn_.matrix((s * heads_ + h) * len * len, len, len);
        ga.noalias() = gc(Eigen::all, cols) * vs(Eigen::all, cols).transpose();
        gvs(Eigen::all, cols).noalias() = a.transpose() * gc(Eigen::all, cols);
        const Eigen::VectorXd dots = (ga.array() * a.array()).rowwise().sum();
        gs = a.array() * (ga.colwise() - dots).array();
        gs *= scale;
        gqs(Eigen::all, cols).noalias() = gs * ks(Eigen::all, cols);
        gks(Eigen::all, cols).noalias() = gs.transpose() * qs(Eigen::all, cols);
      }
    }
  });

  const auto xm = input_.matrix(0, rows, dim_);
  const auto gqm = gq.matrix(0, rows, dim_);
  const auto gkm = gk.matrix(0, rows, dim_);
  const auto gvm = gv.matrix(0, rows, dim_);
  query.grad.matrix(0, dim_, dim_).noalias() += xm.transpose() * gqm;
  key.grad.matrix(0, dim_, dim_).noalias() += xm.transpose() * gkm;
  value.grad.matrix(0, dim_, dim_).noalias() += xm.transpose() * gvm;

  Tensor gx(input_.shape());
  auto gxm = gx.matrix(0, rows, dim_);
  gxm.noalias() = gqm * query.value.matrix(0, dim_, dim_).transpose();
  gxm.noalias() += gkm * key.value.matrix(0, dim_, dim_).transpose();
  gxm.noalias() += gvm * value.value.matrix(0, dim_, dim_).transpose();
  return gx.reshaped(gy_in.shape());
}

// ----------------------------------------------------------- EncoderLayer

EncoderLayer::EncoderLayer(const std::string& name, std::size_t dim, const TfrConfig& cfg)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      mha_(name + ".attn", dim, cfg.heads),
      ff1_(name + ".ff1", dim, cfg.ff_multiplier * dim),
      ff2_(name + ".ff2", cfg.ff_multiplier * dim, dim) {
  cfg.validate(dim);
}

void EncoderLayer::init(Rng& rng) {
  mha_.init(rng);
  ff1_.init(rng);
  ff2_.init(rng);
}

void EncoderLayer::collect(ParameterList& out) {
  ln1_.collect(out);
  mha_.collect(out);
  ln2_.collect(out);
  ff1_.collect(out);
  ff2_.collect(out);
}

Tensor EncoderLayer::forward(const Tensor& x, Mode mode) {
  Tensor a = x + mha_.forward(ln1_.forward(x, mode), mode);
  Tensor f = ff2_.forward(relu_.forward(ff1_.forward(ln2_.forward(a, mode), mode), mode), mode);
  Tensor y = a + f;
  if (!y.all_finite()) throw std::runtime_error("EncoderLayer: non-finite output");
  return y;
}

Tensor EncoderLayer::backward(const Tensor& gy) {
  Tensor ga = gy + ln2_.backward(ff1_.backward(relu_.backward(ff2_.backward(gy))));
  return ga + ln1_.backward(mha_.backward(ga));
}

// -------------------------------------------------------- TemporalRefiner

Tensor maps_to_sequences(const Tensor& level, std::size_t batch) {
  require_rank(level, 4, "maps_to_sequences");
  if (batch == 0 || level.dim(0) % batch) {
    throw std::invalid_argument("maps_to_sequences: " + std::to_string(level.dim(0)) +
                                " items do not split into " + std::to_string(batch) +
                                " samples");
  }
  const std::size_t len = level.dim(0) / batch, dim = level.dim(1);
  const Tensor flat = flatten_spatial(level);  // (batch*T, D, P)
  const std::size_t cells = flat.dim(2);
  Tensor seq({batch * cells, len, dim});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t d = 0; d < dim; ++d) {
        const double* src = flat.data() + ((b * len + t) * dim + d) * cells;
        for (std::size_t p = 0; p < cells; ++p) {
          seq[((b * cells + p) * len + t) * dim + d] = src[p];
        }
      }
  return seq;
}

Tensor sequences_to_maps(const Tensor& seq, std::size_t batch, std::size_t height,
                         std::size_t width) {
  require_rank(seq, 3, "sequences_to_maps");
  const std::size_t cells = height * width;
  if (seq.dim(0) != batch * cells) {
    throw std::invalid_argument("sequences_to_maps: sequence count mismatch");
  }
  const std::size_t len = seq.dim(1), dim = seq.dim(2);
  Tensor flat({batch * len, dim, cells});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t d = 0; d < dim; ++d) {
        double* dst = flat.data() + ((b * len + t) * dim + d) * cells;
        for (std::size_t p = 0; p < cells; ++p) {
          dst[p] = seq[((b * cells + p) * len + t) * dim + d];
        }
      }
  return unflatten_spatial(flat, height, width);
}

TemporalRefiner::TemporalRefiner(const std::string& name, std::size_t dim,
                                 const TfrConfig& cfg)
    : dim_(dim), cfg_(cfg) {
  cfg.validate(dim);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(name + ".layer" + std::to_string(l), dim, cfg);
  }
}

void TemporalRefiner::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

void TemporalRefiner::collect(ParameterList& out) {
  for (auto& l : layers_) l.collect(out);
}

Tensor TemporalRefiner::refine_sequences(const Tensor& seq, Mode mode) {
  require_rank(seq, 3, "TemporalRefiner");
  if (seq.dim(2) != dim_) {
    throw std::invalid_argument("TemporalRefiner: expected dim " + std::to_string(dim_) +
                                ", got " + shape_str(seq.shape()));
  }
  Tensor x = seq;
  if (cfg_.temporal_encoding) {
    const Tensor pe = temporal_encoding(seq.dim(1), dim_);
    for (std::size_t s = 0; s < seq.dim(0); ++s)
      for (std::size_t i = 0; i < pe.size(); ++i) x[s * pe.size() + i] += pe[i];
  }
  for (auto& l : layers_) x = l.forward(x, mode);
  return x;
}

Tensor TemporalRefiner::backward_sequences(const Tensor& gy) {
  Tensor g = gy;
  for (std::size_t l = layers_.size(); l-- > 0;) g = layers_[l].backward(g);
  return g;
}

Tensor TemporalRefiner::forward(const Tensor& level, std::size_t batch, Mode mode) {
  level_shape_ = level.shape();
  batch_ = batch;
  Tensor seq = refine_sequences(maps_to_sequences(level, batch), mode);
  return sequences_to_maps(seq, batch, level.dim(2), level.dim(3));
}

Tensor TemporalRefiner::backward(const Tensor& gy) {
  if (gy.shape() != level_shape_) throw std::invalid_argument("TemporalRefiner::backward: shape");
  Tensor g = backward_sequences(maps_to_sequences(gy, batch_));
  return sequences_to_maps(g, batch_, level_shape_[2], level_shape_[3]);
}

// -------------------------------------------------------------------- Tfr

Tfr::Tfr(const std::string& name, const BackboneConfig& backbone, const TfrConfig& cfg) {
  for (std::size_t s = 0; s < backbone.scales; ++s) {
    refiners_.emplace_back(name + ".scale" + std::to_string(s), backbone.width(s), cfg);
  }
}

void Tfr::init(Rng& rng) {
  for (auto& r : refiners_) r.init(rng);
}

void Tfr::collect(ParameterList& out) {
  for (auto& r : refiners_) r.collect(out);
}

FeaturePyramid Tfr::forward(const FeaturePyramid& pyr, std::size_t batch, Mode mode) {
  if (pyr.scales() != refiners_.size()) {
    throw std::invalid_argument("TFR configured for " + std::to_string(refiners_.size()) +
                                " scales, pyramid has " + std::to_string(pyr.scales()));
  }
  FeaturePyramid out;
  for (std::size_t s = 0; s < pyr.scales(); ++s) {
    out.levels.push_back(refiners_[s].forward(pyr[s], batch, mode));
  }
  return out;
}

FeaturePyramid Tfr::backward(const FeaturePyramid& grads) {
  FeaturePyramid out;
  for (std::size_t s = 0; s < grads.scales(); ++s) {
    out.levels.push_back(refiners_[s].backward(grads[s]));
  }
  return out;
}

}  // namespace ucd
