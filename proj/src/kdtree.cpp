#include "odomkit/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace odomkit {

namespace {
struct HeapItem {
  double d2;
  uint64_t index;
  bool operator<(const HeapItem& o) const {
    if (d2 != o.d2) return d2 < o.d2;
    return index < o.index;
  }
};
}  // namespace

void BaselineKdTree::build(const std::vector<Vec3>& points) {
  pts_ = points;
  nodes_.clear();
  nodes_.reserve(points.size());
  std::vector<int> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  root_ = build_range(order, 0, static_cast<int>(order.size()), 0);
}

int BaselineKdTree::build_range(std::vector<int>& order, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(order.begin() + lo, order.begin() + mid, order.begin() + hi,
                   [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({order[mid], -1, -1, axis});
  const int left = build_range(order, lo, mid, depth + 1);
  const int right = build_range(order, mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Neighbor> BaselineKdTree::radius_neighbors(const Vec3& query, double r,
                                                       int max_k) const {
  std::vector<Neighbor> out;
  if (root_ < 0 || r <= 0.0 || max_k < 1) return out;
  const double r2 = r * r;
  std::priority_queue<HeapItem> heap;

  // Explicit stack; recursion depth is fine but this keeps queries cheap.
  std::vector<int> stack;
  stack.reserve(64);
  stack.push_back(root_);
  while (!stack.empty()) {
    const Node node = nodes_[stack.back()];
    stack.pop_back();
    const Vec3& p = pts_[node.point];
    const double d2 = (p - query).squaredNorm();
    if (d2 <= r2) {
      HeapItem item{d2, static_cast<uint64_t>(node.point)};
      if (static_cast<int>(heap.size()) < max_k) {
        heap.push(item);
      } else if (item < heap.top()) {
        heap.pop();
        heap.push(item);
      }
    }
    const double plane_dist = query[node.axis] - p[node.axis];
    const int near = plane_dist < 0 ? node.left : node.right;
    const int far = plane_dist < 0 ? node.right : node.left;
    if (far >= 0 && plane_dist * plane_dist <= r2) stack.push_back(far);
    if (near >= 0) stack.push_back(near);
  }

  out.resize(heap.size());
  for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    out[i] = {pts_[heap.top().index], std::sqrt(heap.top().d2), heap.top().index};
    heap.pop();
  }
  return out;
}

}  // namespace odomkit
