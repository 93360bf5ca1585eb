#include "ucd/layers.hpp"

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

void require_channels(const Tensor& x, std::size_t channels, const char* layer) {
  require_rank(x, 4, layer);
  if (x.dim(1) != channels) {
    throw std::invalid_argument(std::string(layer) + ": expected " +
                                std::to_string(channels) + " channels, got " +
                                shape_str(x.shape()));
  }
}

// Rows are (channel, ky, kx); columns are output pixels.
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, std::size_t pad, RowMatrix<double>& col) {
  col.resize(Eigen::Index(channels * k * k), Eigen::Index(h * w));
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col.data() + ((c * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(pad);
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = std::ptrdiff_t(xx + kx) - std::ptrdiff_t(pad);
            row[y * w + xx] = (sy < 0 || sx < 0 || sy >= std::ptrdiff_t(h) ||
                               sx >= std::ptrdiff_t(w))
                                  ? 0.0
                                  : plane[std::size_t(sy) * w + std::size_t(sx)];
          }
        }
      }
    }
  }
}

void col2im(const RowMatrix<double>& col, std::size_t channels, std::size_t h,
            std::size_t w, std::size_t k, std::size_t pad, double* gx) {
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = gx + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col.data() + ((c * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(pad);
          if (sy < 0 || sy >= std::ptrdiff_t(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = std::ptrdiff_t(xx + kx) - std::ptrdiff_t(pad);
            if (sx < 0 || sx >= std::ptrdiff_t(w)) continue;
            plane[std::size_t(sy) * w + std::size_t(sx)] += row[y * w + xx];
          }
        }
      }
    }
  }
}

// Sums per-item partial gradients in item order so the result does not
// depend on how items were spread over workers.
void reduce_partials(const std::vector<RowMatrix<double>>& partials,
                     Tensor& grad) {
  auto g = grad.matrix(0, std::size_t(partials.front().rows()),
                       std::size_t(partials.front().cols()));
  for (const auto& p : partials) g += p;
}

}  // namespace

void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel)
    : weight(name + ".weight", {out, in, kernel, kernel}),
      bias(name + ".bias", {out}),
      in_(in),
      out_(out),
      kernel_(kernel),
      pad_(kernel / 2) {
  if (kernel != 1 && kernel != 3) {
    throw std::invalid_argument("Conv2d supports 1x1 and 3x3 kernels");
  }
}

void Conv2d::init(Rng& rng) {
  kaiming_uniform(weight.value, in_ * kernel_ * kernel_, rng);
  bias.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x, Mode mode) {
  require_channels(x, in_, "Conv2d");
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = h * w, kk = in_ * kernel_ * kernel_;
  Tensor y({n, out_, h, w});
  const auto wm = weight.value.matrix(0, out_, kk);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> col;
    for (std::size_t i = begin; i < end; ++i) {
      auto out = y.matrix(i * out_ * hw, out_, hw);
      if (kernel_ == 1) {
        out.noalias() = wm * x.matrix(i * in_ * hw, in_, hw);
      } else {
        im2col(x.data() + i * in_ * hw, in_, h, w, kernel_, pad_, col);
        out.noalias() = wm * col;
      }
      for (std::size_t o = 0; o < out_; ++o) out.row(Eigen::Index(o)).array() += bias.value[o];
    }
  });
  recorded_ = mode == Mode::train;
  if (recorded_) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  require_recorded(recorded_, "Conv2d");
  const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const std::size_t hw = h * w, kk = in_ * kernel_ * kernel_;
  if (gy.shape() != Shape{n, out_, h, w}) {
    throw std::invalid_argument("Conv2d::backward: gradient shape mismatch");
  }
  Tensor gx = Tensor::zeros_like(input_);
  std::vector<RowMatrix<double>> partials(n);
  const auto wm = weight.value.matrix(0, out_, kk);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> col, gcol;
    for (std::size_t i = begin; i < end; ++i) {
      const auto g = gy.matrix(i * out_ * hw, out_, hw);
      if (kernel_ == 1) {
        const auto xi = input_.matrix(i * in_ * hw, in_, hw);
        partials[i].noalias() = g * xi.transpose();
        gx.matrix(i * in_ * hw, in_, hw).noalias() = wm.transpose() * g;
      } else {
        im2col(input_.data() + i * in_ * hw, in_, h, w, kernel_, pad_, col);
        partials[i].noalias() = g * col.transpose();
        gcol.noalias() = wm.transpose() * g;
        col2im(gcol, in_, h, w, kernel_, pad_, gx.data() + i * in_ * hw);
      }
    }
  });
  reduce_partials(partials, weight.grad);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out_; ++o) {
      bias.grad[o] += gy.matrix(i * out_ * hw, out_, hw).row(Eigen::Index(o)).sum();
    }
  }
  return gx;
}

// ------------------------------------------------------ TransposeConv2x2

TransposeConv2x2::TransposeConv2x2(const std::string& name, std::size_t in,
                                   std::size_t out)
    : weight(name + ".weight", {in, out, 2, 2}),
      bias(name + ".bias", {out}),
      in_(in),
      out_(out) {}

void TransposeConv2x2::init(Rng& rng) {
  kaiming_uniform(weight.value, in_, rng);
  bias.value.fill(0.0);
}

Tensor TransposeConv2x2::forward(const Tensor& x, Mode mode) {
  require_channels(x, in_, "TransposeConv2x2");
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
  const std::size_t ow = 2 * w;
  Tensor y({n, out_, 2 * h, ow});
  const auto wm = weight.value.matrix(0, in_, out_ * 4);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> z;
    for (std::size_t i = begin; i < end; ++i) {
      z.noalias() = wm.transpose() * x.matrix(i * in_ * hw, in_, hw);
      double* yi = y.data() + i * out_ * 4 * hw;
      for (std::size_t o = 0; o < out_; ++o) {
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) {
            const double* zr = z.data() + (o * 4 + a * 2 + b) * hw;
            for (std::size_t r = 0; r < h; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                yi[(o * 2 * h + 2 * r + a) * ow + 2 * c + b] = zr[r * w + c] + bias.value[o];
              }
            }
          }
        }
      }
    }
  });
  recorded_ = mode == Mode::train;
  if (recorded_) input_ = x;
  return y;
}

Tensor TransposeConv2x2::backward(const Tensor& gy) {
  require_recorded(recorded_, "TransposeConv2x2");
  const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const std::size_t hw = h * w, ow = 2 * w;
  if (gy.shape() != Shape{n, out_, 2 * h, ow}) {
    throw std::invalid_argument("TransposeConv2x2::backward: gradient shape mismatch");
  }
  Tensor gx = Tensor::zeros_like(input_);
  std::vector<RowMatrix<double>> partials(n);
  const auto wm = weight.value.matrix(0, in_, out_ * 4);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    RowMatrix<double> g(Eigen::Index(out_ * 4), Eigen::Index(hw));
    for (std::size_t i = begin; i < end; ++i) {
      const double* gi = gy.data() + i * out_ * 4 * hw;
      for (std::size_t o = 0; o < out_; ++o)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            double* gr = g.data() + (o * 4 + a * 2 + b) * hw;
            for (std::size_t r = 0; r < h; ++r)
              for (std::size_t c = 0; c < w; ++c)
                gr[r * w + c] = gi[(o * 2 * h + 2 * r + a) * ow + 2 * c + b];
          }
      const auto xi = input_.matrix(i * in_ * hw, in_, hw);
      partials[i].noalias() = xi * g.transpose();
      gx.matrix(i * in_ * hw, in_, hw).noalias() = wm * g;
    }
  });
  reduce_partials(partials, weight.grad);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out_; ++o) {
      const double* plane = gy.data() + (i * out_ + o) * 4 * hw;
      double s = 0.0;
      for (std::size_t p = 0; p < 4 * hw; ++p) s += plane[p];
      bias.grad[o] += s;
    }
  }
  return gx;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, std::size_t channels)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(name + ".running_mean", {channels}, false),
      running_var(name + ".running_var", {channels}, false) {
  gamma.value.fill(1.0);
  running_var.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  const std::size_t channels = gamma.value.size();
  require_channels(x, channels, "BatchNorm2d");
  const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  const double count = double(n * hw);
  Tensor y = Tensor::zeros_like(x);
  inv_std_.assign(channels, 0.0);
  if (mode == Mode::train) xhat_ = Tensor::zeros_like(x);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * channels + c) * hw;
        for (std::size_t q = 0; q < hw; ++q) s += p[q];
      }
      mean = s / count;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * channels + c) * hw;
        for (std::size_t q = 0; q < hw; ++q) ss += (p[q] - mean) * (p[q] - mean);
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      running_mean.value[c] = (1 - kMomentum) * running_mean.value[c] + kMomentum * mean;
      running_var.value[c] = (1 - kMomentum) * running_var.value[c] + kMomentum * unbiased;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * hw;
      for (std::size_t q = 0; q < hw; ++q) {
        const double xh = (x[off + q] - mean) * inv;
        if (mode == Mode::train) xhat_[off + q] = xh;
        y[off + q] = gamma.value[c] * xh + beta.value[c];
      }
    }
  }
  mode_ = mode;
  recorded_ = mode == Mode::train;
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
  require_recorded(recorded_, "BatchNorm2d");
  gy.require_same_shape(xhat_);
  const std::size_t channels = gamma.value.size();
  const std::size_t n = gy.dim(0), hw = gy.dim(2) * gy.dim(3);
  const double count = double(n * hw);
  Tensor gx = Tensor::zeros_like(gy);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * hw;
      for (std::size_t q = 0; q < hw; ++q) {
        sum_g += gy[off + q];
        sum_gx += gy[off + q] * xhat_[off + q];
      }
    }
    gamma.grad[c] += sum_gx;
    beta.grad[c] += sum_g;
    const double scale = gamma.value[c] * inv_std_[c] / count;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels + c) * hw;
      for (std::size_t q = 0; q < hw; ++q) {
        gx[off + q] = scale * (count * gy[off + q] - sum_g - xhat_[off + q] * sum_gx);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------- pointwise layers

Tensor Relu::forward(const Tensor& x, Mode mode) {
  Tensor y = x;
  recorded_ = mode == Mode::train;
  if (recorded_) active_.assign(x.size(), false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool on = y[i] > 0.0;
    if (!on) y[i] = 0.0;
    if (recorded_) active_[i] = on;
  }
  return y;
}

Tensor Relu::backward(const Tensor& gy) {
  require_recorded(recorded_, "Relu");
  if (gy.size() != active_.size()) throw std::invalid_argument("Relu::backward: size mismatch");
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (!active_[i]) gx[i] = 0.0;
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode mode) {
  Tensor y = x;
  for (auto& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  recorded_ = mode == Mode::train;
  if (recorded_) output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& gy) {
  require_recorded(recorded_, "Sigmoid");
  gy.require_same_shape(output_);
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= output_[i] * (1.0 - output_[i]);
  return gx;
}

Tensor MaxPool2::forward(const Tensor& x, Mode mode) {
  require_rank(x, 4, "MaxPool2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) {
    throw std::invalid_argument("MaxPool2: odd spatial extent " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  recorded_ = mode == Mode::train;
  if (recorded_) {
    in_shape_ = x.shape();
    argmax_.assign(y.size(), 0);
  }
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* p = x.data() + plane * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        std::size_t best = (2 * r) * w + 2 * q;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t idx = (2 * r + a) * w + 2 * q + b;
            if (p[idx] > p[best]) best = idx;
          }
        const std::size_t out = plane * oh * ow + r * ow + q;
        y[out] = p[best];
        if (recorded_) argmax_[out] = plane * h * w + best;
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& gy) {
  require_recorded(recorded_, "MaxPool2");
  if (gy.size() != argmax_.size()) throw std::invalid_argument("MaxPool2::backward: size mismatch");
  Tensor gx(in_shape_);
  for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax_[i]] += gy[i];
  return gx;
}

// ------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(const std::string& name, std::size_t in, std::size_t out,
                     bool batchnorm)
    : batchnorm_(batchnorm),
      conv1_(name + ".conv1", in, out, 3),
      conv2_(name + ".conv2", out, out, 3),
      bn1_(name + ".bn1", out),
      bn2_(name + ".bn2", out) {}

void ConvBlock::collect(ParameterList& out) {
  conv1_.collect(out);
  if (batchnorm_) bn1_.collect(out);
  conv2_.collect(out);
  if (batchnorm_) bn2_.collect(out);
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = conv1_.forward(x, mode);
  if (batchnorm_) h = bn1_.forward(h, mode);
  h = relu1_.forward(h, mode);
  h = conv2_.forward(h, mode);
  if (batchnorm_) h = bn2_.forward(h, mode);
  return relu2_.forward(h, mode);
}

Tensor ConvBlock::backward(const Tensor& gy) {
  Tensor g = relu2_.backward(gy);
  if (batchnorm_) g = bn2_.backward(g);
  g = conv2_.backward(g);
  g = relu1_.backward(g);
  if (batchnorm_) g = bn1_.backward(g);
  return conv1_.backward(g);
}

// ----------------------------------------------------------- concat/split

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), hw = a.dim(2) * a.dim(3);
  const std::size_t ca = a.dim(1), cb = b.dim(1);
  Tensor y({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, std::size_t channels_a) {
  require_rank(g, 4, "split_channels");
  const std::size_t n = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
  const std::size_t cb = c - channels_a;
  Tensor a({n, channels_a, g.dim(2), g.dim(3)});
  Tensor b({n, cb, g.dim(2), g.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(g.data() + i * c * hw, channels_a * hw, a.data() + i * channels_a * hw);
    std::copy_n(g.data() + (i * c + channels_a) * hw, cb * hw, b.data() + i * cb * hw);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace ucd
