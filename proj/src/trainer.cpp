#include "ucd/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ucd/objective.hpp"

namespace ucd {

using nlohmann::json;

void TrainConfig::validate(std::size_t divisor) const {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (patch_size == 0 || patch_size % divisor) {
    throw std::invalid_argument("patch size " + std::to_string(patch_size) +
                                " not divisible by " + std::to_string(divisor));
  }
  if (!(base_prob > 0.0)) throw std::invalid_argument("base probability must be > 0");
  if (candidate_crops < 1) throw std::invalid_argument("need at least one candidate crop");
  if (train_length < 2) throw std::invalid_argument("training series length must be >= 2");
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
}

std::vector<double> candidate_probabilities(const std::vector<double>& fractions,
                                            double base_prob) {
  std::vector<double> p(fractions.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = fractions[i] + base_prob);
  for (auto& v : p) v /= total;
  return p;
}

std::size_t draw_index(const std::vector<double>& probabilities, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    acc += probabilities[i];
    if (u < acc) return i;
  }
  return probabilities.size() - 1;
}

std::vector<std::size_t> sample_timestamps(std::size_t available, std::size_t length, Rng& rng) {
  if (length > available) {
    throw std::invalid_argument("cannot draw " + std::to_string(length) + " timestamps from " +
                                std::to_string(available));
  }
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < length; ++i) std::swap(idx[i], idx[i + rng.below(available - i)]);
  idx.resize(length);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

Sample crop(const Scene& scene, const std::vector<std::size_t>& times, std::size_t top,
            std::size_t left, std::size_t rows, std::size_t cols, EdgeKind kind) {
  const std::size_t ch = scene.images.dim(1), h = scene.images.dim(2), w = scene.images.dim(3);
  const std::size_t len = times.size();
  Sample s{Tensor({len, ch, rows, cols}), Tensor({len, rows, cols}), Tensor()};
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < rows; ++y)
        for (std::size_t x = 0; x < cols; ++x) {
          s.images[((t * ch + c) * rows + y) * cols + x] =
              scene.images[((times[t] * ch + c) * h + top + y) * w + left + x];
        }
    for (std::size_t y = 0; y < rows; ++y)
      for (std::size_t x = 0; x < cols; ++x) {
        s.seg[(t * rows + y) * cols + x] = scene.seg_labels[(times[t] * h + top + y) * w + left + x];
      }
  }
  const EdgeSet edges(kind, len);
  s.change = Tensor({edges.size(), rows, cols});
  const std::size_t plane = rows * cols;
  for (std::size_t n = 0; n < edges.size(); ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      s.change[n * plane + p] =
          (s.seg[edges[n].earlier * plane + p] > 0.5) != (s.seg[edges[n].later * plane + p] > 0.5)
              ? 1.0
              : 0.0;
    }
  return s;
}

}  // namespace

Sample sample_patch(const Scene& scene, const TrainConfig& cfg, Rng& rng) {
  const std::size_t h = scene.seg_labels.dim(1), w = scene.seg_labels.dim(2);
  const std::size_t p = cfg.patch_size;
  if (p > h || p > w) {
    throw std::invalid_argument("patch " + std::to_string(p) + " larger than scene " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const auto times = sample_timestamps(scene.length(), cfg.train_length, rng);

  // Pixels whose label is not constant over the chosen timestamps.
  std::vector<std::uint8_t> changed(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double first = scene.seg_labels[times.front() * h * w + i];
    for (std::size_t t : times) changed[i] |= scene.seg_labels[t * h * w + i] != first;
  }
  std::vector<std::size_t> tops(cfg.candidate_crops), lefts(cfg.candidate_crops);
  std::vector<double> fractions(cfg.candidate_crops);
  for (std::size_t c = 0; c < cfg.candidate_crops; ++c) {
    tops[c] = rng.below(h - p + 1);
    lefts[c] = rng.below(w - p + 1);
    std::size_t count = 0;
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) count += changed[(tops[c] + y) * w + lefts[c] + x];
    fractions[c] = double(count) / double(p * p);
  }
  const std::size_t pick = draw_index(candidate_probabilities(fractions, cfg.base_prob), rng);
  return crop(scene, times, tops[pick], lefts[pick], p, p, cfg.edge_kind);
}

Sample full_sample(const Scene& scene, const TrainConfig& cfg) {
  const std::size_t avail = scene.length(), len = cfg.train_length;
  if (len > avail) throw std::invalid_argument("scene shorter than training length");
  std::vector<std::size_t> times(len);
  for (std::size_t t = 0; t < len; ++t) {
    times[t] = len == 1 ? 0 : (t * (avail - 1) + (len - 1) / 2) / (len - 1);
  }
  return crop(scene, times, 0, 0, scene.seg_labels.dim(1), scene.seg_labels.dim(2),
              cfg.edge_kind);
}

namespace {

// Applies the geometric transform to every (rows x cols) plane of `t`.
Tensor transform_planes(const Tensor& t, std::size_t turns, bool hflip, bool vflip) {
  const std::size_t r = t.rank();
  const std::size_t n = t.dim(r - 1);
  if (t.dim(r - 2) != n) throw std::invalid_argument("augment: patch must be square");
  const std::size_t plane = n * n, planes = t.size() / plane;
  Tensor out = Tensor::zeros_like(t);
  for (std::size_t q = 0; q < planes; ++q) {
    const double* src = t.data() + q * plane;
    double* dst = out.data() + q * plane;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        // Destination (i, j) after flips maps back to (a, b) of the rotated plane.
        const std::size_t a = vflip ? n - 1 - i : i;
        const std::size_t b = hflip ? n - 1 - j : j;
        std::size_t si = a, sj = b;
        // Counter-clockwise quarter turn: rot(a, b) = src(b, n-1-a).
        for (std::size_t k = 0; k < turns % 4; ++k) {
          const std::size_t ni = sj, nj = n - 1 - si;
          si = ni;
          sj = nj;
        }
        dst[i * n + j] = src[si * n + sj];
      }
  }
  return out;
}

}  // namespace

Sample apply_geometry(const Sample& s, std::size_t quarter_turns, bool hflip, bool vflip) {
  return {transform_planes(s.images, quarter_turns, hflip, vflip),
          transform_planes(s.seg, quarter_turns, hflip, vflip),
          transform_planes(s.change, quarter_turns, hflip, vflip)};
}

Sample augment(const Sample& s, Rng& rng) {
  const std::size_t k = rng.below(4);
  const bool hflip = rng.bernoulli(0.5);
  const bool vflip = rng.bernoulli(0.5);
  return apply_geometry(s, k, hflip, vflip);
}

// ------------------------------------------------------------------ AdamW

AdamW::AdamW(ParameterList params, double weight_decay)
    : params_(std::move(params)), weight_decay_(weight_decay) {
  for (const Parameter* p : params_) {
    m_.push_back(Tensor::zeros_like(p->value));
    v_.push_back(Tensor::zeros_like(p->value));
  }
}

void AdamW::step(double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i]->value;
    const Tensor& g = params_[i]->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1 - b1) * g[k];
      v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
      w[k] -= lr * weight_decay_ * w[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(ChangeNet& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), optimizer_(model.trainable(), cfg.weight_decay) {}

namespace {

Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts.front()->shape().begin(), parts.front()->shape().end());
  Tensor out(shape);
  const std::size_t each = parts.front()->size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->shape() != parts.front()->shape()) {
      throw std::invalid_argument("batch samples differ in shape");
    }
    std::copy_n(parts[i]->data(), each, out.data() + i * each);
  }
  return out;
}

Tensor unstack(const Tensor& t, std::size_t i) {
  Shape shape(t.shape().begin() + 1, t.shape().end());
  const std::size_t each = shape_size(shape);
  return Tensor(shape, std::vector<double>(t.data() + i * each, t.data() + (i + 1) * each));
}

}  // namespace

StepLoss Trainer::run(const std::vector<Sample>& batch, Mode mode) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<const Tensor*> imgs;
  for (const auto& s : batch) imgs.push_back(&s.images);
  const NetworkOutput out = model_.forward(stack(imgs), mode);
  const double inv_batch = 1.0 / double(batch.size());
  Tensor g_seg = Tensor::zeros_like(out.seg), g_ch = Tensor::zeros_like(out.change);
  StepLoss loss;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const LossValue ls = jaccard_loss_sum(unstack(out.seg, b), batch[b].seg, cfg_.jaccard_power);
    const LossValue lc =
        jaccard_loss_sum(unstack(out.change, b), batch[b].change, cfg_.jaccard_power);
    loss.seg += ls.loss * inv_batch;
    loss.change += lc.loss * inv_batch;
    std::copy_n(ls.grad.data(), ls.grad.size(), g_seg.data() + b * ls.grad.size());
    std::copy_n(lc.grad.data(), lc.grad.size(), g_ch.data() + b * lc.grad.size());
    loss.terms = batch[b].seg.dim(0) + batch[b].change.dim(0);
  }
  loss.total = loss.seg + loss.change;
  if (!std::isfinite(loss.total)) {
    throw std::runtime_error("training diverged: non-finite loss (seg " +
                             std::to_string(loss.seg) + ", change " +
                             std::to_string(loss.change) + ")");
  }
  if (mode == Mode::train) {
    g_seg *= inv_batch;
    g_ch *= inv_batch;
    model_.zero_grad();
    model_.backward(g_seg, g_ch);
  }
  return loss;
}

StepLoss Trainer::step(const std::vector<Sample>& batch, double lr) {
  StepLoss loss = run(batch, Mode::train);
  optimizer_.step(lr);
  return loss;
}

StepLoss Trainer::loss(const std::vector<Sample>& batch) { return run(batch, Mode::eval); }

double Trainer::validation_loss(const std::vector<Scene>& scenes) {
  double total = 0.0;
  for (const Scene& s : scenes) total += run({full_sample(s, cfg_)}, Mode::eval).total;
  return total / double(scenes.size());
}

// ------------------------------------------------------------------ train

TrainResult train(const std::vector<Scene>& train_scenes, const std::vector<Scene>& val_scenes,
                  const ModelConfig& model_cfg, const TrainConfig& cfg, const LogSink& sink) {
  if (train_scenes.empty() || val_scenes.empty()) {
    throw std::invalid_argument("training needs at least one training and one validation scene");
  }
  if (model_cfg.edge_kind != cfg.edge_kind) {
    throw std::invalid_argument("model and training edge kinds differ");
  }
  cfg.validate(model_cfg.backbone.divisor());

  TrainResult result;
  result.model = std::make_unique<ChangeNet>(model_cfg);
  ChangeNet& model = *result.model;
  Trainer trainer(model, cfg);
  Rng rng(cfg.seed);
  auto emit = [&](json line) {
    if (sink) sink(line);
    result.log.push_back(std::move(line));
  };

  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch
                          : (train_scenes.size() + cfg.batch_size - 1) / cfg.batch_size;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values = model.snapshot();
  std::size_t stale = 0;
  std::vector<std::size_t> order;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.lr * (1.0 - double(epoch) / double(cfg.max_epochs));
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<Sample> batch;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (order.empty()) {
          order.resize(train_scenes.size());
          std::iota(order.begin(), order.end(), 0);
          for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        }
        const Scene& scene = train_scenes[order.back()];
        order.pop_back();
        batch.push_back(augment(sample_patch(scene, cfg, rng), rng));
      }
      const StepLoss l = trainer.step(batch, lr);
      ++result.steps;
      emit({{"step", result.steps}, {"epoch", epoch}, {"lr", lr}, {"loss", l.total},
            {"seg_loss", l.seg}, {"change_loss", l.change}});
    }
    const double val = trainer.validation_loss(val_scenes);
    result.epochs_run = epoch + 1;
    const bool improved = val < best;
    if (improved) {
      best = val;
      result.best_epoch = epoch;
      best_values = model.snapshot();
      stale = 0;
    } else {
      ++stale;
    }
    emit({{"epoch", epoch}, {"val_loss", val}, {"best_val_loss", best}, {"improved", improved}});
    if (stale >= cfg.patience) break;
  }
  model.restore(best_values);
  result.best_val_loss = best;
  return result;
}

}  // namespace ucd
