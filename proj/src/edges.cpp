#include "ucd/edges.hpp"

#include <algorithm>
#include <stdexcept>

namespace ucd {

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::adjacent: return "adjacent";
    case EdgeKind::cyclic: return "cyclic";
    case EdgeKind::dense: return "dense";
  }
  return "?";
}

EdgeKind parse_edge_kind(std::string_view name) {
  if (name == "adjacent") return EdgeKind::adjacent;
  if (name == "cyclic") return EdgeKind::cyclic;
  if (name == "dense") return EdgeKind::dense;
  throw std::invalid_argument("unknown edge kind '" + std::string(name) + "'");
}

EdgeSet::EdgeSet(EdgeKind kind, std::size_t length) : kind_(kind), length_(length) {
  if (length < 2) {
    throw std::invalid_argument("edge set needs at least 2 timestamps, got " +
                                std::to_string(length));
  }
  switch (kind) {
    case EdgeKind::dense:
      for (std::size_t t = 0; t < length; ++t)
        for (std::size_t k = t + 1; k < length; ++k) edges_.push_back({t, k});
      break;
    case EdgeKind::cyclic:
      edges_.push_back({0, length - 1});
      [[fallthrough]];
    case EdgeKind::adjacent:
      for (std::size_t t = 0; t + 1 < length; ++t) edges_.push_back({t, t + 1});
      break;
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

std::optional<std::size_t> EdgeSet::index_of(Edge e) const {
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it == edges_.end() || *it != e) return std::nullopt;
  return std::size_t(it - edges_.begin());
}

bool EdgeSet::contains(const EdgeSet& other) const {
  if (other.length_ != length_) return false;
  return std::all_of(other.edges_.begin(), other.edges_.end(),
                     [&](const Edge& e) { return index_of(e).has_value(); });
}

}  // namespace ucd
