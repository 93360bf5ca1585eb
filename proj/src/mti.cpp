#include "ucd/mti.hpp"

#include "ucd/objective.hpp"
#include "ucd/parallel.hpp"

namespace ucd {

std::string_view to_string(MtiMode mode) {
  switch (mode) {
    case MtiMode::degenerate: return "degenerate";
    case MtiMode::adjacent: return "adjacent";
    case MtiMode::cyclic: return "cyclic";
    case MtiMode::dense: return "dense";
  }
  return "?";
}

MtiMode parse_mti_mode(std::string_view name) {
  if (name == "degenerate") return MtiMode::degenerate;
  if (name == "adjacent") return MtiMode::adjacent;
  if (name == "cyclic") return MtiMode::cyclic;
  if (name == "dense") return MtiMode::dense;
  throw std::invalid_argument("unknown MTI mode '" + std::string(name) + "'");
}

PixelPotentials PotentialRasters::pixel(std::size_t i, std::size_t j,
                                        const std::vector<std::size_t>& network) const {
  const std::size_t h = height(), w = width(), plane = h * w, pix = i * w + j;
  PixelPotentials pot;
  pot.node.resize(length());
  for (std::size_t t = 0; t < length(); ++t) {
    pot.node[t] = PixelPotentials::node_table(seg[t * plane + pix]);
  }
  pot.links.reserve(network.size());
  pot.edge.reserve(network.size());
  for (std::size_t n : network) {
    pot.links.push_back(edges[n]);
    pot.edge.push_back(PixelPotentials::edge_table(change[n * plane + pix]));
  }
  return pot;
}

PotentialRasters build_potentials(const Tensor& seg_probs, const Tensor& change_probs,
                                  const EdgeSet& edges) {
  require_rank(seg_probs, 3, "build_potentials (segmentation)");
  require_rank(change_probs, 3, "build_potentials (change)");
  if (seg_probs.dim(0) != edges.length()) {
    throw std::invalid_argument("build_potentials: " + std::to_string(seg_probs.dim(0)) +
                                " segmentation maps for an edge set over " +
                                std::to_string(edges.length()) + " timestamps");
  }
  if (change_probs.dim(0) != edges.size() || change_probs.dim(1) != seg_probs.dim(1) ||
      change_probs.dim(2) != seg_probs.dim(2)) {
    throw std::invalid_argument("build_potentials: change maps " +
                                shape_str(change_probs.shape()) + " do not match " +
                                std::to_string(edges.size()) + " edges of size " +
                                std::to_string(seg_probs.dim(1)) + "x" +
                                std::to_string(seg_probs.dim(2)));
  }
  PotentialRasters out{seg_probs, change_probs, edges};
  for (auto& v : out.seg.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("build_potentials: non-finite probability");
    v = clamp_probability(v);
  }
  for (auto& v : out.change.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("build_potentials: non-finite probability");
    v = clamp_probability(v);
  }
  return out;
}

Tensor MapSeries::derived_change(std::size_t t, std::size_t k) const {
  return xor_maps(slice_map(states, t), slice_map(states, k));
}

Tensor MapSeries::derived_changes(const EdgeSet& edges) const {
  const std::size_t h = states.dim(1), w = states.dim(2);
  Tensor out({edges.size(), h, w});
  for (std::size_t n = 0; n < edges.size(); ++n) {
    const Tensor c = derived_change(edges[n].earlier, edges[n].later);
    std::copy(c.values().begin(), c.values().end(), out.data() + n * h * w);
  }
  return out;
}

MapSeries integrate(const Tensor& seg_probs, const Tensor& change_probs, const EdgeSet& edges,
                    MtiMode mode, const IntegrateOptions& options) {
  const PotentialRasters pot = build_potentials(seg_probs, change_probs, edges);
  const std::size_t len = pot.length(), h = pot.height(), w = pot.width(), plane = h * w;

  std::vector<std::size_t> network;
  if (mode != MtiMode::degenerate) {
    const EdgeKind kind = mode == MtiMode::adjacent ? EdgeKind::adjacent
                          : mode == MtiMode::cyclic ? EdgeKind::cyclic
                                                    : EdgeKind::dense;
    const EdgeSet wanted(kind, len);
    for (const Edge& e : wanted.edges()) {
      auto n = edges.index_of(e);
      if (!n) {
        throw std::invalid_argument(
            "MTI mode " + std::string(to_string(mode)) + " needs change edge (" +
            std::to_string(e.earlier) + "," + std::to_string(e.later) +
            "), absent from the " + std::string(to_string(edges.kind())) + " change outputs");
      }
      network.push_back(*n);
    }
  }
  const bool chain = mode == MtiMode::adjacent;
  if (!chain && mode != MtiMode::degenerate && len > options.max_length) {
    throw std::invalid_argument("exhaustive MAP limited to T <= " +
                                std::to_string(options.max_length));
  }

  MapSeries out{Tensor({len, h, w}), Tensor({h, w}), mode};
  parallel_for(plane, [&](std::size_t begin, std::size_t end) {
    StateVector states(len);
    for (std::size_t pix = begin; pix < end; ++pix) {
      const PixelPotentials px = pot.pixel(pix / w, pix % w, network);
      if (mode == MtiMode::degenerate) {
        for (std::size_t t = 0; t < len; ++t) states[t] = seg_probs[t * plane + pix] > 0.5 ? 1 : 0;
      } else if (chain) {
        states = map_decode_chain(px);
      } else {
        states = map_decode_general(px, options.max_length);
      }
      for (std::size_t t = 0; t < len; ++t) out.states[t * plane + pix] = states[t];
      out.map_score[pix] = assignment_score(px, states);
    }
  }, 64);
  return out;
}

}  // namespace ucd
