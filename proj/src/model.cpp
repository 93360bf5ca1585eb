#include "ucd/model.hpp"

#include <map>
#include <stdexcept>

#include "ucd/json_io.hpp"
#include "ucd/raster_io.hpp"

namespace ucd {

void ModelConfig::validate() const {
  backbone.validate();
  if (use_tfr) {
    for (std::size_t s = 0; s < backbone.scales; ++s) {
      tfr.validate(backbone.width(s));
      if (tfr.temporal_encoding && backbone.width(s) % 2) {
        throw std::invalid_argument("temporal encoding needs even feature widths");
      }
    }
  }
}

ChangeNet::ChangeNet(const ModelConfig& cfg)
    : cfg_(cfg),
      encoder_("encoder", cfg.backbone),
      seg_decoder_("seg_decoder", cfg.backbone),
      change_decoder_("change_decoder", cfg.backbone) {
  cfg.validate();
  if (cfg.use_tfr) tfr_ = Tfr("tfr", cfg.backbone, cfg.tfr);
  Rng rng(cfg.seed);
  encoder_.init(rng);
  if (cfg.use_tfr) tfr_.init(rng);
  seg_decoder_.init(rng);
  change_decoder_.init(rng);
  encoder_.collect(tensors_);
  if (cfg.use_tfr) tfr_.collect(tensors_);
  seg_decoder_.collect(tensors_);
  change_decoder_.collect(tensors_);
}

ParameterList ChangeNet::trainable() const {
  ParameterList out;
  for (Parameter* p : tensors_)
    if (p->trainable) out.push_back(p);
  return out;
}

std::optional<Parameter*> ChangeNet::find(const std::string& name) const {
  for (Parameter* p : tensors_)
    if (p->name == name) return p;
  return std::nullopt;
}

void ChangeNet::zero_grad() {
  for (Parameter* p : tensors_) p->zero_grad();
}

std::size_t ChangeNet::parameter_count() const {
  std::size_t n = 0;
  for (Parameter* p : tensors_)
    if (p->trainable) n += p->value.size();
  return n;
}

std::vector<Tensor> ChangeNet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (const Parameter* p : tensors_) out.push_back(p->value);
  return out;
}

void ChangeNet::restore(const std::vector<Tensor>& values) {
  if (values.size() != tensors_.size()) throw std::invalid_argument("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    tensors_[i]->value.require_same_shape(values[i]);
    tensors_[i]->value = values[i];
  }
}

NetworkOutput ChangeNet::forward(const Tensor& images, Mode mode) {
  require_rank(images, 5, "ChangeNet");
  const std::size_t batch = images.dim(0), len = images.dim(1);
  const std::size_t h = images.dim(3), w = images.dim(4);
  if (images.dim(2) != cfg_.backbone.in_channels) {
    throw std::invalid_argument("model expects " + std::to_string(cfg_.backbone.in_channels) +
                                " channels, images have shape " + shape_str(images.shape()));
  }
  cfg_.backbone.validate_input(h, w);
  const EdgeSet edge_set = edges(len);
  batch_ = batch;
  length_ = len;

  FeaturePyramid pyr = encoder_.forward(
      images.reshaped({batch * len, images.dim(2), h, w}), mode);
  check_pyramid(pyr, cfg_.backbone, h, w);
  if (cfg_.use_tfr) pyr = tfr_.forward(pyr, batch, mode);
  const FeaturePyramid ch_pyr = change_pyramid(pyr, edge_set, batch);

  NetworkOutput out;
  out.seg = seg_decoder_.forward(pyr, mode).reshaped({batch, len, h, w});
  out.change = change_decoder_.forward(ch_pyr, mode).reshaped({batch, edge_set.size(), h, w});
  return out;
}

void ChangeNet::backward(const Tensor& grad_seg, const Tensor& grad_change) {
  if (batch_ == 0) throw std::logic_error("ChangeNet::backward before forward");
  const EdgeSet edge_set = edges(length_);
  const std::size_t h = grad_seg.dim(2), w = grad_seg.dim(3);
  FeaturePyramid g = seg_decoder_.backward(grad_seg.reshaped({batch_ * length_, h, w}));
  const FeaturePyramid g_ch = change_pyramid_backward(
      change_decoder_.backward(grad_change.reshaped({batch_ * edge_set.size(), h, w})),
      edge_set, batch_);
  for (std::size_t s = 0; s < g.scales(); ++s) g[s] += g_ch[s];
  if (cfg_.use_tfr) g = tfr_.backward(g);
  encoder_.backward(g);
}

Prediction infer(ChangeNet& model, const Tensor& images) {
  require_rank(images, 4, "infer");
  const std::size_t len = images.dim(0), h = images.dim(2), w = images.dim(3);
  Shape batched{1};
  batched.insert(batched.end(), images.shape().begin(), images.shape().end());
  NetworkOutput out = model.forward(images.reshaped(batched), Mode::eval);
  EdgeSet edges = model.edges(len);
  return {out.seg.reshaped({len, h, w}), out.change.reshaped({edges.size(), h, w}), edges};
}

void save_checkpoint(const ChangeNet& model, const std::filesystem::path& stem) {
  std::string blob;
  json index = json::array();
  for (const Parameter* p : model.tensors()) {
    index.push_back({{"name", p->name},
                     {"offset", blob.size()},
                     {"shape", p->value.shape()},
                     {"trainable", p->trainable}});
    blob += encode_raster(p->value);
  }
  json doc{{"format", "ucd-checkpoint-1"}, {"model", model.config()}, {"tensors", index}};
  auto rts = stem;
  rts += ".rts";
  auto js = stem;
  js += ".json";
  write_file(rts, blob);
  write_file(js, doc.dump(2));
}

std::unique_ptr<ChangeNet> load_checkpoint(const std::filesystem::path& stem) {
  auto rts = stem;
  rts += ".rts";
  auto js = stem;
  js += ".json";
  const json doc = json::parse(read_file(js));
  if (doc.value("format", "") != "ucd-checkpoint-1") {
    throw FormatError(js.string() + ": not a checkpoint index");
  }
  auto model = std::make_unique<ChangeNet>(doc.at("model").get<ModelConfig>());
  const std::string blob = read_file(rts);
  std::map<std::string, json> entries;
  for (const auto& e : doc.at("tensors")) entries[e.at("name").get<std::string>()] = e;
  for (Parameter* p : model->tensors()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw FormatError("checkpoint lacks tensor " + p->name);
    std::size_t pos = it->second.at("offset").get<std::size_t>();
    Tensor t = decode_raster(blob, pos);
    if (t.shape() != p->value.shape()) {
      throw FormatError("checkpoint tensor " + p->name + " has shape " + shape_str(t.shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    }
    p->value = std::move(t);
  }
  if (entries.size() != model->tensors().size()) {
    throw FormatError("checkpoint holds tensors the model does not define");
  }
  return model;
}

}  // namespace ucd
