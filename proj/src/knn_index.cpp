#include "gsvr/knn_index.hpp"

#include <algorithm>
#include <string>
#include <utility>

namespace gsvr {

namespace {

constexpr std::uint32_t kLeafSize = 12;

struct Candidate {
  double d2;
  std::uint32_t id;
};

inline bool closer(const Candidate& a, const Candidate& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.id < b.id);
}

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Bounded max-heap keyed on (d2, id); the top is the current worst kept.
class KBest {
 public:
  explicit KBest(std::size_t k) : k_(k) { heap_.reserve(k); }

  bool full() const { return heap_.size() == k_; }
  double worst() const { return heap_.front().d2; }

  void offer(const Candidate& c) {
    if (!full()) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (closer(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }

  void write_sorted(std::span<std::uint32_t> out) {
    std::sort_heap(heap_.begin(), heap_.end(), closer);
    for (std::size_t i = 0; i < heap_.size(); ++i) out[i] = heap_[i].id;
  }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

}  // namespace

NeighborIndex NeighborIndex::build(std::span<const double> means, std::size_t min_k, long epoch) {
  if (means.size() % 3 != 0) throw InvalidParameter("build_index: means must be N x 3");
  const std::size_t n = means.size() / 3;
  if (n == 0 || n < min_k) {
    throw InvalidParameter("build_index: need N >= K (N=" + std::to_string(n) +
                           ", K=" + std::to_string(min_k) + ")");
  }
  NeighborIndex index;
  index.epoch_ = epoch;
  index.points_.resize(n);
  index.order_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    index.points_[j] = Vec3(means[3 * j], means[3 * j + 1], means[3 * j + 2]);
    index.order_[j] = static_cast<std::uint32_t>(j);
  }
  index.nodes_.reserve(2 * n / kLeafSize + 2);
  index.build_node(0, static_cast<std::uint32_t>(n));
  return index;
}

std::int32_t NeighborIndex::build_node(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  auto key_less = [&](std::uint32_t a, std::uint32_t b) {
    const double pa = points_[a][axis], pb = points_[b][axis];
    return pa < pb || (pa == pb && a < b);
  };
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, key_less);
  const double split = points_[order_[mid]][axis];

  const std::int32_t left = build_node(begin, mid);
  const std::int32_t right = build_node(mid, end);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void NeighborIndex::query_one(const Vec3& point, std::size_t k, std::span<std::uint32_t> out) const {
  KBest best(k);
  // Explicit stack of (node, lower bound on squared distance).
  std::pair<std::int32_t, double> stack[128];
  int top = 0;
  stack[top++] = {0, 0.0};
  while (top > 0) {
    const auto [node_id, bound] = stack[--top];
    if (best.full() && bound > best.worst()) continue;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t id = order_[i];
        best.offer({squared_distance(point, points_[id]), id});
      }
      continue;
    }
    // Left holds coordinates <= split, right holds coordinates >= split.
    const double diff = point[node.axis] - node.split;
    const double plane = diff * diff;
    const std::int32_t near_child = diff <= 0.0 ? node.left : node.right;
    const std::int32_t far_child = diff <= 0.0 ? node.right : node.left;
    stack[top++] = {far_child, std::max(bound, plane)};
    stack[top++] = {near_child, bound};
  }
  best.write_sorted(out);
}

NeighborIds NeighborIndex::query(std::span<const Vec3> points, std::size_t k) const {
  if (k == 0 || k > points_.size()) {
    throw InvalidParameter("query: K must satisfy 1 <= K <= N (K=" + std::to_string(k) +
                           ", N=" + std::to_string(points_.size()) + ")");
  }
  NeighborIds result;
  result.k = k;
  result.ids.resize(points.size() * k);
  for (std::size_t i = 0; i < points.size(); ++i) {
    query_one(points[i], k, {result.ids.data() + i * k, k});
  }
  return result;
}

}  // namespace gsvr
