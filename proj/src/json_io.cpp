#include "ucd/json_io.hpp"

namespace ucd {

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const BackboneConfig& c) {
  j = json{{"scales", c.scales},
           {"base_width", c.base_width},
           {"in_channels", c.in_channels},
           {"use_batchnorm", c.use_batchnorm}};
}

void from_json(const json& j, BackboneConfig& c) {
  read_opt(j, "scales", c.scales);
  read_opt(j, "base_width", c.base_width);
  read_opt(j, "in_channels", c.in_channels);
  read_opt(j, "use_batchnorm", c.use_batchnorm);
}

void to_json(json& j, const TfrConfig& c) {
  j = json{{"heads", c.heads},
           {"layers", c.layers},
           {"ff_multiplier", c.ff_multiplier},
           {"temporal_encoding", c.temporal_encoding}};
}

void from_json(const json& j, TfrConfig& c) {
  read_opt(j, "heads", c.heads);
  read_opt(j, "layers", c.layers);
  read_opt(j, "ff_multiplier", c.ff_multiplier);
  read_opt(j, "temporal_encoding", c.temporal_encoding);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"backbone", c.backbone},
           {"tfr", c.tfr},
           {"use_tfr", c.use_tfr},
           {"edge_kind", std::string(to_string(c.edge_kind))},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  read_opt(j, "backbone", c.backbone);
  read_opt(j, "tfr", c.tfr);
  read_opt(j, "use_tfr", c.use_tfr);
  if (j.contains("edge_kind")) c.edge_kind = parse_edge_kind(j.at("edge_kind").get<std::string>());
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const SceneSpec& s) {
  j = json{{"seed", s.seed},
           {"length", s.length},
           {"height", s.height},
           {"width", s.width},
           {"channels", s.channels},
           {"buildings", s.buildings},
           {"min_extent", s.min_extent},
           {"max_extent", s.max_extent},
           {"noise_sigma", s.noise_sigma},
           {"illumination_jitter", s.illumination_jitter},
           {"demolition_rate", s.demolition_rate}};
}

void from_json(const json& j, SceneSpec& s) {
  read_opt(j, "seed", s.seed);
  read_opt(j, "length", s.length);
  read_opt(j, "height", s.height);
  read_opt(j, "width", s.width);
  read_opt(j, "channels", s.channels);
  read_opt(j, "buildings", s.buildings);
  read_opt(j, "min_extent", s.min_extent);
  read_opt(j, "max_extent", s.max_extent);
  read_opt(j, "noise_sigma", s.noise_sigma);
  read_opt(j, "illumination_jitter", s.illumination_jitter);
  read_opt(j, "demolition_rate", s.demolition_rate);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"patch_size", c.patch_size},
           {"candidate_crops", c.candidate_crops},
           {"base_prob", c.base_prob},
           {"train_length", c.train_length},
           {"edge_kind", std::string(to_string(c.edge_kind))},
           {"seed", c.seed},
           {"weight_decay", c.weight_decay},
           {"steps_per_epoch", c.steps_per_epoch},
           {"jaccard_power", c.jaccard_power}};
}

void from_json(const json& j, TrainConfig& c) {
  read_opt(j, "lr", c.lr);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "max_epochs", c.max_epochs);
  read_opt(j, "patience", c.patience);
  read_opt(j, "patch_size", c.patch_size);
  read_opt(j, "candidate_crops", c.candidate_crops);
  read_opt(j, "base_prob", c.base_prob);
  read_opt(j, "train_length", c.train_length);
  if (j.contains("edge_kind")) c.edge_kind = parse_edge_kind(j.at("edge_kind").get<std::string>());
  read_opt(j, "seed", c.seed);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "steps_per_epoch", c.steps_per_epoch);
  read_opt(j, "jaccard_power", c.jaccard_power);
}

void to_json(json& j, const Counts& c) {
  j = json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

void to_json(json& j, const EvalReport& r) {
  j = json{{"task", std::string(to_string(r.task))},
           {"f1", r.f1},
           {"iou", r.iou},
           {"f1_micro", r.f1_micro},
           {"iou_micro", r.iou_micro}};
  json maps = json::array();
  for (std::size_t i = 0; i < r.map_counts.size(); ++i) {
    json m = r.map_counts[i];
    m["name"] = r.map_names[i];
    m["f1"] = r.map_counts[i].f1();
    m["iou"] = r.map_counts[i].iou();
    maps.push_back(std::move(m));
  }
  j["maps"] = std::move(maps);
}

json edges_to_json(const EdgeSet& edges) {
  json list = json::array();
  for (const Edge& e : edges.edges()) list.push_back({e.earlier, e.later});
  return json{{"kind", std::string(to_string(edges.kind()))},
              {"length", edges.length()},
              {"edges", std::move(list)}};
}

EdgeSet edges_from_json(const json& j) {
  EdgeSet edges(parse_edge_kind(j.at("kind").get<std::string>()),
                j.at("length").get<std::size_t>());
  if (j.contains("edges")) {
    const auto& list = j.at("edges");
    bool same = list.size() == edges.size();
    for (std::size_t n = 0; same && n < list.size(); ++n) {
      same = list[n].at(0).get<std::size_t>() == edges[n].earlier &&
             list[n].at(1).get<std::size_t>() == edges[n].later;
    }
    if (!same) throw std::invalid_argument("edge manifest disagrees with its declared kind");
  }
  return edges;
}

}  // namespace ucd
