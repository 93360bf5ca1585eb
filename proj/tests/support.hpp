#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>

#include "ucd/layers.hpp"
#include "ucd/rng.hpp"
#include "ucd/tensor.hpp"

namespace ucd::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Elementwise |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central finite-difference check of a layer with forward f and backward b on
// the scalar L = sum(r * f(x)) for a random projection r. Every element of x
// and of every trainable parameter is perturbed by +-h. Returns the largest
// relative error.
struct GradCheck {
  std::function<Tensor(const Tensor&)> forward;
  std::function<Tensor(const Tensor&)> backward;
  ParameterList params;
  double h = 1e-5;

  double run(Tensor x, Rng& rng) const {
    const Tensor y = forward(x);
    const Tensor r = random_tensor(y.shape(), rng);
    for (Parameter* p : params) p->zero_grad();
    forward(x);
    const Tensor gx = backward(r);
    std::vector<Tensor> gp;
    for (Parameter* p : params) gp.push_back(p->grad);

    auto loss = [&] { return dot(forward(x), r); };
    double worst = 0.0;
    auto probe = [&](double& v, double analytic) {
      const double keep = v;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double down = loss();
      v = keep;
      worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
    };
    for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], gx[i]);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!params[k]->trainable) continue;
      for (std::size_t i = 0; i < params[k]->value.size(); ++i) probe(params[k]->value[i], gp[k][i]);
    }
    return worst;
  }
};

}  // namespace ucd::testing
