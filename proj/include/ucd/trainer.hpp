#pragma once

#include <functional>
#include <json.hpp>
#include <memory>

#include "ucd/model.hpp"
#include "ucd/rng.hpp"
#include "ucd/synthgen.hpp"

namespace ucd {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t patch_size = 64;
  std::size_t candidate_crops = 20;
  double base_prob = 0.05;  // added to every candidate's change fraction
  std::size_t train_length = 4;
  EdgeKind edge_kind = EdgeKind::dense;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  // Optimizer steps per epoch; 0 means ceil(training scenes / batch size).
  std::size_t steps_per_epoch = 0;
  double jaccard_power = 1.0;

  void validate(std::size_t divisor) const;
};

// One training example: a patch time series and its labels.
struct Sample {
  Tensor images;  // (T, C, P, P)
  Tensor seg;     // (T, P, P)
  Tensor change;  // (N, P, P), ordered as EdgeSet(edge_kind, T)
};

// Candidate selection probabilities: (fraction_i + base) / sum_j (fraction_j + base).
std::vector<double> candidate_probabilities(const std::vector<double>& change_fractions,
                                            double base_prob);
// Index drawn from a discrete distribution by inverse CDF on one uniform draw.
std::size_t draw_index(const std::vector<double>& probabilities, Rng& rng);

// `length` distinct timestamps of [0, available), sorted; all of them when equal.
std::vector<std::size_t> sample_timestamps(std::size_t available, std::size_t length, Rng& rng);

// Oversampled crop: `candidate_crops` random windows weighted by the fraction of
// pixels whose label changes across the chosen timestamps, plus base_prob.
Sample sample_patch(const Scene& scene, const TrainConfig& cfg, Rng& rng);

// Full-scene sample over evenly spread timestamps (first and last included).
Sample full_sample(const Scene& scene, const TrainConfig& cfg);

// Rotation by quarter_turns * 90 degrees counter-clockwise, then optional
// horizontal (column-reversing) and vertical (row-reversing) flips, applied
// jointly to every image, segmentation and change plane.
Sample apply_geometry(const Sample& s, std::size_t quarter_turns, bool hflip, bool vflip);
Sample augment(const Sample& s, Rng& rng);

// AdamW with decoupled weight decay; beta1 0.9, beta2 0.999, eps 1e-8.
class AdamW {
 public:
  AdamW(ParameterList params, double weight_decay);
  void step(double lr);

 private:
  ParameterList params_;
  std::vector<Tensor> m_, v_;
  double weight_decay_;
  std::size_t t_ = 0;
};

struct StepLoss {
  double total = 0.0;   // mean over the batch of the per-sample loss
  double seg = 0.0;
  double change = 0.0;
  std::size_t terms = 0;  // Jaccard terms per sample: T + N
};

// Forward/backward/update on one batch. Exposed for tests and the trainer.
class Trainer {
 public:
  Trainer(ChangeNet& model, const TrainConfig& cfg);

  StepLoss step(const std::vector<Sample>& batch, double lr);
  StepLoss loss(const std::vector<Sample>& batch);  // eval mode, no update
  double validation_loss(const std::vector<Scene>& scenes);

 private:
  StepLoss run(const std::vector<Sample>& batch, Mode mode);

  ChangeNet& model_;
  TrainConfig cfg_;
  AdamW optimizer_;
};

struct TrainResult {
  std::unique_ptr<ChangeNet> model;  // best-validation parameters
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  std::vector<nlohmann::json> log;  // one JSON object per line of the training log
};

using LogSink = std::function<void(const nlohmann::json&)>;

// Trains with linear LR decay from cfg.lr to 0 over max_epochs and early
// stopping on validation loss. Throws on a non-finite loss.
TrainResult train(const std::vector<Scene>& train_scenes, const std::vector<Scene>& val_scenes,
                  const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const LogSink& sink = {});

}  // namespace ucd
