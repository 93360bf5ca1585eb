#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ucd/edges.hpp"
#include "ucd/tensor.hpp"

namespace ucd {

// ------------------------------------------------------------------ loss

inline constexpr double kJaccardSmooth = 1e-6;

struct LossValue {
  double loss = 0.0;
  Tensor grad;  // d loss / d output, same shape as the output
};

// Soft (power) Jaccard loss between outputs o in (0, 1) and binary labels y:
//   1 - (sum o*y + d) / (sum o^p + sum y - sum o*y + d),  d = 1e-6.
// p = 1 is the standard soft Jaccard.
LossValue jaccard_loss(const Tensor& output, const Tensor& label, double power = 1.0);

// Sum of per-map Jaccard losses over the leading axis of (maps, H, W)
// tensors; one term per map.
LossValue jaccard_loss_sum(const Tensor& outputs, const Tensor& labels,
                           double power = 1.0);

// --------------------------------------------------------------- metrics

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
    return *this;
  }
  // TP / (TP + (FP + FN) / 2); 1 when TP = FP = FN = 0.
  double f1() const;
  // TP / (TP + FP + FN); 1 when TP = FP = FN = 0.
  double iou() const;
};

// Pixels > 0.5 count as positive.
Counts count_binary(const Tensor& pred, const Tensor& truth);

struct BinaryMetrics {
  double f1 = 0.0, iou = 0.0;
  Counts counts;
};

BinaryMetrics binary_metrics(const Tensor& pred, const Tensor& truth);

// ------------------------------------------------------------ evaluation

enum class EvalTask { bitemporal_cd, continuous_cd, segmentation };

std::string_view to_string(EvalTask task);
EvalTask parse_eval_task(std::string_view name);

struct EvalReport {
  EvalTask task = EvalTask::bitemporal_cd;
  double f1 = 0.0;   // headline: macro average over constituent maps
  double iou = 0.0;
  double f1_micro = 0.0;  // counts pooled over constituent maps
  double iou_micro = 0.0;
  std::vector<std::string> map_names;
  std::vector<Counts> map_counts;
};

// Evaluates a binary building-state series (T, H, W); change maps are the XOR
// of states, compared against the XOR of the labels.
EvalReport evaluate_states(const Tensor& states, const Tensor& seg_labels, EvalTask task);

// Evaluates raw network outputs thresholded at 0.5. Change tasks read change
// maps from `change_probs` (N, H, W) ordered as `edges`; a required edge that
// is absent is an error.
EvalReport evaluate_outputs(const Tensor& seg_probs, const Tensor& change_probs,
                            const EdgeSet& edges, const Tensor& seg_labels, EvalTask task);

// Mean of f1/iou (macro and micro) across reports of one task, e.g. scenes.
EvalReport average_reports(const std::vector<EvalReport>& reports);

// Slice i of the leading axis of a (N, H, W) tensor.
Tensor slice_map(const Tensor& maps, std::size_t i);
Tensor xor_maps(const Tensor& a, const Tensor& b);

}  // namespace ucd
