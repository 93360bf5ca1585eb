#pragma once

// The full network: shared encoder -> per-scale TFR -> change features ->
// segmentation and change decoders.

#include <filesystem>
#include <memory>
#include <optional>

#include "ucd/backbone.hpp"
#include "ucd/change_features.hpp"
#include "ucd/tfr.hpp"

namespace ucd {

struct ModelConfig {
  BackboneConfig backbone;
  TfrConfig tfr;
  bool use_tfr = true;
  EdgeKind edge_kind = EdgeKind::dense;  // edges the change decoder predicts
  std::uint64_t seed = 0;                // parameter initialization

  void validate() const;
};

struct NetworkOutput {
  Tensor seg;     // (batch, T, H, W)
  Tensor change;  // (batch, N, H, W)
};

class ChangeNet {
 public:
  explicit ChangeNet(const ModelConfig& cfg);
  ChangeNet(const ChangeNet&) = delete;
  ChangeNet& operator=(const ChangeNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  EdgeSet edges(std::size_t length) const { return EdgeSet(cfg_.edge_kind, length); }

  // images: (batch, T, C, H, W).
  NetworkOutput forward(const Tensor& images, Mode mode);
  // Gradients of the loss w.r.t. both outputs of the last training forward.
  void backward(const Tensor& grad_seg, const Tensor& grad_change);

  // Every tensor the model owns, parameters and buffers, in a fixed order.
  const ParameterList& tensors() const { return tensors_; }
  ParameterList trainable() const;
  std::optional<Parameter*> find(const std::string& name) const;
  void zero_grad();
  std::size_t parameter_count() const;

  // Snapshot/restore of every tensor value (for early stopping).
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Tfr tfr_;
  Decoder seg_decoder_, change_decoder_;
  ParameterList tensors_;
  std::size_t batch_ = 0, length_ = 0;
};

// Single-series inference in eval mode: images (T, C, H, W) ->
// seg (T, H, W) and change (N, H, W) over the model's edge kind.
struct Prediction {
  Tensor seg;
  Tensor change;
  EdgeSet edges;
};
Prediction infer(ChangeNet& model, const Tensor& images);

// Checkpoint = `<stem>.rts` (concatenated RTS1 records) + `<stem>.json`
// (model config and a name -> {offset, shape} index into the .rts file).
void save_checkpoint(const ChangeNet& model, const std::filesystem::path& stem);
std::unique_ptr<ChangeNet> load_checkpoint(const std::filesystem::path& stem);

}  // namespace ucd
