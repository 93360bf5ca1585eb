#pragma once

// Brute-force MAP reference used by the MTI tests: scores every assignment
// directly from the potential tables and returns the lexicographically
// smallest one within the tie tolerance of the maximum.

#include <cmath>
#include <limits>
#include <vector>

#include "ucd/mti.hpp"
#include "ucd/rng.hpp"

namespace ucd::testing {

inline double oracle_score(const PixelPotentials& pot, const std::vector<int>& s) {
  double log_p = 0.0;
  for (std::size_t t = 0; t < pot.node.size(); ++t) log_p += std::log(pot.node[t][s[t]]);
  for (std::size_t n = 0; n < pot.links.size(); ++n) {
    const int a = s[pot.links[n].earlier], b = s[pot.links[n].later];
    log_p += std::log(pot.edge[n][a * 2 + b]);
  }
  return log_p;
}

inline StateVector oracle_map(const PixelPotentials& pot) {
  const std::size_t len = pot.node.size();
  std::vector<std::vector<int>> all;
  std::vector<double> scores;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < (std::size_t{1} << len); ++code) {
    std::vector<int> s(len);
    for (std::size_t t = 0; t < len; ++t) s[t] = int((code >> (len - 1 - t)) & 1);
    all.push_back(s);
    scores.push_back(oracle_score(pot, s));
    best = std::max(best, scores.back());
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (scores[i] >= best - kTieTolerance) return StateVector(all[i].begin(), all[i].end());
  }
  return {};
}

// Random potentials; when `quantized`, probabilities come from a small grid so
// exact ties occur.
inline PixelPotentials random_potentials(std::size_t len, EdgeKind kind, Rng& rng,
                                         bool quantized) {
  auto prob = [&] {
    return quantized ? 0.25 * double(1 + rng.below(3)) : rng.uniform(0.001, 0.999);
  };
  PixelPotentials pot;
  for (std::size_t t = 0; t < len; ++t) pot.node.push_back(PixelPotentials::node_table(prob()));
  if (len >= 2) {
    for (const Edge& e : EdgeSet(kind, len).edges()) {
      pot.links.push_back(e);
      pot.edge.push_back(PixelPotentials::edge_table(prob()));
    }
  }
  return pot;
}

}  // namespace ucd::testing
