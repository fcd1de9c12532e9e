#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gsvr/geometry.hpp"

namespace gsvr {

/// Exact K-nearest-neighbor index over a snapshot of primitive means.
///
/// Results are sorted by squared Euclidean distance, ties broken by the lower
/// primitive index, and agree exactly with a brute-force scan of the snapshot.
/// The index never tracks later movement of the means; callers rebuild it.
class NeighborIndex {
 public:
  NeighborIndex() = default;

  /// Builds a kd-tree over `means` (3N flat, as in GaussianField::means).
  /// Throws InvalidParameter when N < min_k.
  static NeighborIndex build(std::span<const double> means, std::size_t min_k = 1,
                             long epoch = 0);

  /// K nearest snapshot means per point. Throws InvalidParameter if K > N or K == 0.
  NeighborIds query(std::span<const Vec3> points, std::size_t k) const;

  /// Single-point variant writing K ids into `out`.
  void query_one(const Vec3& point, std::size_t k, std::span<std::uint32_t> out) const;

  std::size_t size() const { return points_.size(); }
  long epoch() const { return epoch_; }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range into order_ (leaves)
    std::int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };

  std::int32_t build_node(std::uint32_t begin, std::uint32_t end);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  long epoch_ = 0;
};

/// Convenience wrapper matching the free-function form of the interface.
inline NeighborIndex build_index(std::span<const double> means, std::size_t min_k = 1) {
  return NeighborIndex::build(means, min_k);
}

}  // namespace gsvr
