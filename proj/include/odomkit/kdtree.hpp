// Median-split KD-tree rebuilt from scratch on every batch; the baseline the
// dynamic octree is benchmarked against. Same exact query semantics as the
// map: (distance, index) ordering against brute force.
#pragma once

#include <vector>

#include "odomkit/geometry.hpp"
#include "odomkit/voxel_map.hpp"

namespace odomkit {

class BaselineKdTree {
 public:
  // Full rebuild over all points; indices are positions in `points`.
  void build(const std::vector<Vec3>& points);

  std::vector<Neighbor> radius_neighbors(const Vec3& query, double r, int max_k) const;

  size_t size() const { return pts_.size(); }

 private:
  struct Node {
    int point = -1;
    int left = -1;
    int right = -1;
    int axis = 0;
  };

  int build_range(std::vector<int>& order, int lo, int hi, int depth);

  std::vector<Vec3> pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace odomkit
