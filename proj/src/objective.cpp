#include "ucd/objective.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace ucd {

LossValue jaccard_loss(const Tensor& output, const Tensor& label, double power) {
  output.require_same_shape(label);
  if (power <= 0.0) throw std::invalid_argument("Jaccard power must be positive");
  double inter = 0.0, sum_op = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double o = output[i], y = label[i];
    if (!(o > 0.0 && o < 1.0)) {
      throw std::invalid_argument("Jaccard loss: output " + std::to_string(o) +
                                  " outside (0, 1)");
    }
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("Jaccard loss: label not binary");
    inter += o * y;
    sum_op += power == 1.0 ? o : std::pow(o, power);
    sum_y += y;
  }
  const double num = inter + kJaccardSmooth;
  const double den = sum_op + sum_y - inter + kJaccardSmooth;
  LossValue out{1.0 - num / den, Tensor::zeros_like(output)};
  const double den2 = den * den;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double o = output[i], y = label[i];
    const double dden = (power == 1.0 ? 1.0 : power * std::pow(o, power - 1.0)) - y;
    out.grad[i] = -(y * den - num * dden) / den2;
  }
  return out;
}

LossValue jaccard_loss_sum(const Tensor& outputs, const Tensor& labels, double power) {
  outputs.require_same_shape(labels);
  require_rank(outputs, 3, "jaccard_loss_sum");
  LossValue total{0.0, Tensor::zeros_like(outputs)};
  const std::size_t plane = outputs.dim(1) * outputs.dim(2);
  for (std::size_t m = 0; m < outputs.dim(0); ++m) {
    LossValue term = jaccard_loss(slice_map(outputs, m), slice_map(labels, m), power);
    total.loss += term.loss;
    std::copy_n(term.grad.data(), plane, total.grad.data() + m * plane);
  }
  return total;
}

// ---------------------------------------------------------------- metrics

double Counts::f1() const {
  if (tp + fp + fn == 0) return 1.0;
  return double(tp) / (double(tp) + 0.5 * double(fp + fn));
}

double Counts::iou() const {
  if (tp + fp + fn == 0) return 1.0;
  return double(tp) / double(tp + fp + fn);
}

Counts count_binary(const Tensor& pred, const Tensor& truth) {
  pred.require_same_shape(truth);
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5, t = truth[i] > 0.5;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

BinaryMetrics binary_metrics(const Tensor& pred, const Tensor& truth) {
  const Counts c = count_binary(pred, truth);
  return {c.f1(), c.iou(), c};
}

// ------------------------------------------------------------- evaluation

std::string_view to_string(EvalTask task) {
  switch (task) {
    case EvalTask::bitemporal_cd: return "bitemporal_cd";
    case EvalTask::continuous_cd: return "continuous_cd";
    case EvalTask::segmentation: return "segmentation";
  }
  return "?";
}

EvalTask parse_eval_task(std::string_view name) {
  if (name == "bitemporal_cd" || name == "bitemporal") return EvalTask::bitemporal_cd;
  if (name == "continuous_cd" || name == "continuous") return EvalTask::continuous_cd;
  if (name == "segmentation") return EvalTask::segmentation;
  throw std::invalid_argument("unknown evaluation task '" + std::string(name) + "'");
}

Tensor slice_map(const Tensor& maps, std::size_t i) {
  require_rank(maps, 3, "slice_map");
  const std::size_t plane = maps.dim(1) * maps.dim(2);
  if (i >= maps.dim(0)) throw std::out_of_range("slice_map: index out of range");
  return Tensor({maps.dim(1), maps.dim(2)},
                std::vector<double>(maps.data() + i * plane, maps.data() + (i + 1) * plane));
}

Tensor xor_maps(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b);
  Tensor out = Tensor::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ((a[i] > 0.5) != (b[i] > 0.5)) ? 1.0 : 0.0;
  return out;
}

namespace {

Tensor threshold(const Tensor& probs) {
  Tensor out = Tensor::zeros_like(probs);
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

std::string edge_name(std::size_t t, std::size_t k) {
  return "change(" + std::to_string(t) + "," + std::to_string(k) + ")";
}

// `predict_change` and `predict_seg` return binary maps.
EvalReport evaluate_with(const std::function<Tensor(std::size_t, std::size_t)>& predict_change,
                         const std::function<Tensor(std::size_t)>& predict_seg,
                         const Tensor& seg_labels, EvalTask task) {
  require_rank(seg_labels, 3, "evaluate");
  const std::size_t len = seg_labels.dim(0);
  if (len < 2) throw std::invalid_argument("evaluation needs at least 2 timestamps");
  EvalReport r;
  r.task = task;
  auto add = [&](std::string name, const Tensor& pred, const Tensor& truth) {
    r.map_names.push_back(std::move(name));
    r.map_counts.push_back(count_binary(pred, truth));
  };
  switch (task) {
    case EvalTask::bitemporal_cd:
      add(edge_name(0, len - 1), predict_change(0, len - 1),
          xor_maps(slice_map(seg_labels, 0), slice_map(seg_labels, len - 1)));
      break;
    case EvalTask::continuous_cd:
      for (std::size_t t = 0; t + 1 < len; ++t) {
        add(edge_name(t, t + 1), predict_change(t, t + 1),
            xor_maps(slice_map(seg_labels, t), slice_map(seg_labels, t + 1)));
      }
      break;
    case EvalTask::segmentation:
      add("seg(0)", predict_seg(0), slice_map(seg_labels, 0));
      add("seg(" + std::to_string(len - 1) + ")", predict_seg(len - 1),
          slice_map(seg_labels, len - 1));
      break;
  }
  Counts pooled;
  for (const Counts& c : r.map_counts) {
    r.f1 += c.f1();
    r.iou += c.iou();
    pooled += c;
  }
  r.f1 /= double(r.map_counts.size());
  r.iou /= double(r.map_counts.size());
  r.f1_micro = pooled.f1();
  r.iou_micro = pooled.iou();
  return r;
}

}  // namespace

EvalReport evaluate_states(const Tensor& states, const Tensor& seg_labels, EvalTask task) {
  states.require_same_shape(seg_labels);
  const Tensor bin = threshold(states);
  return evaluate_with(
      [&](std::size_t t, std::size_t k) { return xor_maps(slice_map(bin, t), slice_map(bin, k)); },
      [&](std::size_t t) { return slice_map(bin, t); }, seg_labels, task);
}

EvalReport evaluate_outputs(const Tensor& seg_probs, const Tensor& change_probs,
                            const EdgeSet& edges, const Tensor& seg_labels, EvalTask task) {
  seg_probs.require_same_shape(seg_labels);
  require_rank(change_probs, 3, "evaluate_outputs");
  if (change_probs.dim(0) != edges.size() || edges.length() != seg_labels.dim(0)) {
    throw std::invalid_argument("evaluate_outputs: change maps do not match the edge set");
  }
  return evaluate_with(
      [&](std::size_t t, std::size_t k) {
        auto n = edges.index_of({t, k});
        if (!n) {
          throw std::invalid_argument("evaluation needs change map " + edge_name(t, k) +
                                      ", absent from the " +
                                      std::string(to_string(edges.kind())) + " edge set");
        }
        return threshold(slice_map(change_probs, *n));
      },
      [&](std::size_t t) { return threshold(slice_map(seg_probs, t)); }, seg_labels, task);
}

EvalReport average_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  EvalReport out;
  out.task = reports.front().task;
  for (const auto& r : reports) {
    if (r.task != out.task) throw std::invalid_argument("average_reports: mixed tasks");
    out.f1 += r.f1;
    out.iou += r.iou;
    out.f1_micro += r.f1_micro;
    out.iou_micro += r.iou_micro;
  }
  const double n = double(reports.size());
  out.f1 /= n;
  out.iou /= n;
  out.f1_micro /= n;
  out.iou_micro /= n;
  return out;
}

}  // namespace ucd
