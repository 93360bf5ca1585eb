#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ucd {

enum class EdgeKind { adjacent, cyclic, dense };

std::string_view to_string(EdgeKind kind);
EdgeKind parse_edge_kind(std::string_view name);

// Ordered timestamp pair, earlier < later. Timestamps are zero-based.
struct Edge {
  std::size_t earlier = 0;
  std::size_t later = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Change edges of one kind over a series of `length` timestamps, sorted
// lexicographically; an edge's position is its index n in every per-edge
// tensor (change outputs, change labels, change decoder batch).
class EdgeSet {
 public:
  EdgeSet(EdgeKind kind, std::size_t length);

  EdgeKind kind() const { return kind_; }
  std::size_t length() const { return length_; }
  std::size_t size() const { return edges_.size(); }
  const std::vector<Edge>& edges() const& { return edges_; }
  std::vector<Edge> edges() && { return std::move(edges_); }
  const Edge& operator[](std::size_t n) const { return edges_[n]; }

  std::optional<std::size_t> index_of(Edge e) const;
  bool contains(const EdgeSet& other) const;

 private:
  EdgeKind kind_;
  std::size_t length_;
  std::vector<Edge> edges_;
};

inline EdgeSet build_edge_set(EdgeKind kind, std::size_t length) {
  return EdgeSet(kind, length);
}

}  // namespace ucd
