#pragma once

// Multi-task integration: every pixel carries a pairwise Markov network over
// its T binary building states. Node potentials come from segmentation
// outputs, edge potentials from change outputs, and the per-pixel MAP
// assignment yields a building-map series whose change maps are, by
// construction, consistent with its segmentation maps.
//
// Potential tables are strictly positive. Decoding works on their logarithms.
// Among assignments whose log scores agree within kTieTolerance the
// lexicographically smallest state vector wins (state 0 preferred, earliest
// timestamp most significant).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ucd/edges.hpp"
#include "ucd/tensor.hpp"

namespace ucd {

inline constexpr double kPotentialEps = 1e-6;
inline constexpr double kTieTolerance = 1e-11;
inline constexpr std::size_t kDefaultMaxEnumLength = 20;

using StateVector = std::vector<std::uint8_t>;

template <typename Scalar>
Scalar clamp_probability(Scalar p) {
  return std::clamp(p, Scalar(kPotentialEps), Scalar(1.0 - kPotentialEps));
}

// Potentials of one pixel network. node[t] = {phi(0), phi(1)};
// edge[n] = {phi(0,0), phi(0,1), phi(1,0), phi(1,1)} for links[n].
template <typename Scalar>
struct BasicPixelPotentials {
  std::vector<std::array<Scalar, 2>> node;
  std::vector<Edge> links;
  std::vector<std::array<Scalar, 4>> edge;

  std::size_t length() const { return node.size(); }

  // Node table (1 - p, p); p clamped to [eps, 1 - eps].
  static std::array<Scalar, 2> node_table(Scalar seg_prob) {
    const Scalar p = clamp_probability(seg_prob);
    return {Scalar(1) - p, p};
  }
  // Equal states get 1 - c, differing states get c; c clamped.
  static std::array<Scalar, 4> edge_table(Scalar change_prob) {
    const Scalar c = clamp_probability(change_prob);
    return {Scalar(1) - c, c, c, Scalar(1) - c};
  }

  void validate() const {
    if (edge.size() != links.size()) {
      throw std::invalid_argument("pixel potentials: edge table count mismatch");
    }
    for (const Edge& e : links) {
      if (e.earlier >= e.later || e.later >= node.size()) {
        throw std::invalid_argument("pixel potentials: edge references missing node");
      }
    }
  }
};

using PixelPotentials = BasicPixelPotentials<double>;

// Log score: sum_t log node[t][s_t] + sum_n log edge[n][s_t, s_k].
template <typename Scalar>
double assignment_score(const BasicPixelPotentials<Scalar>& pot, const StateVector& states) {
  double score = 0.0;
  for (std::size_t t = 0; t < pot.length(); ++t) score += std::log(double(pot.node[t][states[t]]));
  for (std::size_t n = 0; n < pot.links.size(); ++n) {
    const Edge& e = pot.links[n];
    score += std::log(double(pot.edge[n][2 * states[e.earlier] + states[e.later]]));
  }
  return score;
}

// Exact MAP for a chain network (links exactly (t, t+1), t = 0..T-2, in
// order; T = 1 with no links is allowed) by max-product dynamic programming
// in log space. Suffix values are computed backward and the assignment is
// read off forward, taking state 0 on ties, which yields the
// lexicographically smallest optimum.
template <typename Scalar>
StateVector map_decode_chain(const BasicPixelPotentials<Scalar>& pot) {
  pot.validate();
  const std::size_t len = pot.length();
  if (len == 0) return {};
  if (pot.links.size() != len - 1) {
    throw std::invalid_argument("chain decoder needs exactly T-1 adjacent edges");
  }
  for (std::size_t t = 0; t + 1 < len; ++t) {
    if (pot.links[t].earlier != t || pot.links[t].later != t + 1) {
      throw std::invalid_argument("chain decoder: edge " + std::to_string(t) +
                                  " is not (t, t+1)");
    }
  }
  std::vector<std::array<double, 2>> suffix(len);
  std::vector<std::array<double, 4>> log_edge(len ? len - 1 : 0);
  for (std::size_t t = 0; t + 1 < len; ++t)
    for (int c = 0; c < 4; ++c) log_edge[t][c] = std::log(double(pot.edge[t][c]));

  for (std::size_t t = len; t-- > 0;) {
    for (int s = 0; s < 2; ++s) {
      double v = std::log(double(pot.node[t][s]));
      if (t + 1 < len) {
        v += std::max(log_edge[t][2 * s] + suffix[t + 1][0],
                      log_edge[t][2 * s + 1] + suffix[t + 1][1]);
      }
      suffix[t][s] = v;
    }
  }
  StateVector states(len);
  states[0] = suffix[0][1] > suffix[0][0] + kTieTolerance ? 1 : 0;
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const int s = states[t];
    const double v0 = log_edge[t][2 * s] + suffix[t + 1][0];
    const double v1 = log_edge[t][2 * s + 1] + suffix[t + 1][1];
    states[t + 1] = v1 > v0 + kTieTolerance ? 1 : 0;
  }
  return states;
}

// Exact MAP for any edge structure by enumerating all 2^T assignments in
// lexicographic order. Throws when T exceeds `max_length`.
template <typename Scalar>
StateVector map_decode_general(const BasicPixelPotentials<Scalar>& pot,
                               std::size_t max_length = kDefaultMaxEnumLength) {
  pot.validate();
  const std::size_t len = pot.length();
  if (len > max_length || len >= 63) {
    throw std::invalid_argument("exhaustive MAP limited to T <= " +
                                std::to_string(max_length) + ", got " + std::to_string(len));
  }
  std::vector<std::array<double, 2>> log_node(len);
  for (std::size_t t = 0; t < len; ++t)
    for (int s = 0; s < 2; ++s) log_node[t][s] = std::log(double(pot.node[t][s]));
  std::vector<std::array<double, 4>> log_edge(pot.links.size());
  for (std::size_t n = 0; n < pot.links.size(); ++n)
    for (int c = 0; c < 4; ++c) log_edge[n][c] = std::log(double(pot.edge[n][c]));

  StateVector states(len), best(len, 0);
  double best_score = -std::numeric_limits<double>::infinity();
  const std::uint64_t total = std::uint64_t{1} << len;
  for (std::uint64_t a = 0; a < total; ++a) {
    for (std::size_t t = 0; t < len; ++t) states[t] = std::uint8_t((a >> (len - 1 - t)) & 1U);
    double score = 0.0;
    for (std::size_t t = 0; t < len; ++t) score += log_node[t][states[t]];
    for (std::size_t n = 0; n < pot.links.size(); ++n) {
      const Edge& e = pot.links[n];
      score += log_edge[n][2 * states[e.earlier] + states[e.later]];
    }
    if (score > best_score + kTieTolerance) {
      best_score = score;
      best = states;
    }
  }
  return best;
}

// ------------------------------------------------------------ raster scale

enum class MtiMode { degenerate, adjacent, cyclic, dense };

std::string_view to_string(MtiMode mode);
MtiMode parse_mti_mode(std::string_view name);

// Clamped probability rasters from which per-pixel tables are built.
struct PotentialRasters {
  Tensor seg;     // (T, H, W) in [eps, 1 - eps]
  Tensor change;  // (N, H, W) in [eps, 1 - eps], ordered as `edges`
  EdgeSet edges;

  std::size_t length() const { return seg.dim(0); }
  std::size_t height() const { return seg.dim(1); }
  std::size_t width() const { return seg.dim(2); }

  // Network of pixel (i, j) over the edges of `network` (a subset of
  // `edges`); an empty network gives node potentials only.
  PixelPotentials pixel(std::size_t i, std::size_t j,
                        const std::vector<std::size_t>& network) const;
};

PotentialRasters build_potentials(const Tensor& seg_probs, const Tensor& change_probs,
                                  const EdgeSet& edges);

// Per-pixel MAP building states.
struct MapSeries {
  Tensor states;     // (T, H, W), values 0/1
  Tensor map_score;  // (H, W), log score of the chosen assignment
  MtiMode mode = MtiMode::degenerate;

  std::size_t length() const { return states.dim(0); }
  // states[t] XOR states[k].
  Tensor derived_change(std::size_t t, std::size_t k) const;
  // Derived change maps for every edge of `edges`, (N, H, W).
  Tensor derived_changes(const EdgeSet& edges) const;
};

struct IntegrateOptions {
  std::size_t max_length = kDefaultMaxEnumLength;
};

// seg_probs (T, H, W); change_probs (N, H, W) ordered as `edges`, the edge
// set the change decoder produced. The mode's edges must all be present.
MapSeries integrate(const Tensor& seg_probs, const Tensor& change_probs, const EdgeSet& edges,
                    MtiMode mode, const IntegrateOptions& options = {});

}  // namespace ucd
