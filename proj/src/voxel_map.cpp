#include "odomkit/voxel_map.hpp"

#include <algorithm>
#include <chrono>
#include <queue>
#include <sstream>
#include <unordered_set>

namespace odomkit {

namespace {

struct Entry {
  Vec3 p;
  uint64_t index;
};

// (dist^2, index) ordering shared by map queries and the test oracles.
struct HeapItem {
  double d2;
  uint64_t index;
  Vec3 p;
  bool operator<(const HeapItem& o) const {
    if (d2 != o.d2) return d2 < o.d2;
    return index < o.index;
  }
};

double box_min_dist2(const Vec3& q, const Vec3& center, double half) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = center[a] - half, hi = center[a] + half;
    const double d = q[a] < lo ? lo - q[a] : (q[a] > hi ? q[a] - hi : 0.0);
    d2 += d * d;
  }
  return d2;
}

}  // namespace

// Cubic region covering one voxel, subdivided past leaf_capacity until the
// child edge would fall below min_leaf_edge.
struct VoxelMap::Octree {
  Vec3 center;
  double half;
  std::vector<Entry> entries;                    // leaf payload
  std::unique_ptr<std::array<Octree, 8>> kids;   // set once split

  Octree(const Vec3& c, double h) : center(c), half(h) {}
  Octree() : center(Vec3::Zero()), half(0) {}

  bool is_leaf() const { return !kids; }

  int child_of(const Vec3& p) const {
    return (p.x() >= center.x() ? 1 : 0) | (p.y() >= center.y() ? 2 : 0) |
           (p.z() >= center.z() ? 4 : 0);
  }

  void insert(const Entry& e, int leaf_capacity, double min_leaf_edge) {
    if (!is_leaf()) {
      (*kids)[child_of(e.p)].insert(e, leaf_capacity, min_leaf_edge);
      return;
    }
    entries.push_back(e);
    const bool can_split = half >= min_leaf_edge;  // child edge = half
    if (static_cast<int>(entries.size()) > leaf_capacity && can_split) {
      kids = std::make_unique<std::array<Octree, 8>>();
      for (int k = 0; k < 8; ++k) {
        Vec3 c = center;
        c.x() += (k & 1 ? 0.5 : -0.5) * half;
        c.y() += (k & 2 ? 0.5 : -0.5) * half;
        c.z() += (k & 4 ? 0.5 : -0.5) * half;
        (*kids)[k] = Octree(c, 0.5 * half);
      }
      for (const Entry& old : entries) {
        (*kids)[child_of(old.p)].entries.push_back(old);
      }
      entries.clear();
      entries.shrink_to_fit();
    }
  }

  template <typename Visit>
  void collect(const Vec3& q, double r2, const Visit& visit) const {
    if (box_min_dist2(q, center, half) > r2) return;
    if (is_leaf()) {
      for (const Entry& e : entries) {
        const double d2 = (e.p - q).squaredNorm();
        if (d2 <= r2) visit(e, d2);
      }
      return;
    }
    for (const Octree& k : *kids) k.collect(q, r2, visit);
  }

  void serialize(std::ostringstream& os) const {
    os << '(' << center.x() << ',' << center.y() << ',' << center.z() << ';' << half;
    if (is_leaf()) {
      for (const Entry& e : entries) os << '|' << e.index;
    } else {
      for (const Octree& k : *kids) k.serialize(os);
    }
    os << ')';
  }
};

VoxelMap::VoxelMap(const Config& config) : config_(config) {}
VoxelMap::~VoxelMap() = default;
VoxelMap::VoxelMap(VoxelMap&&) noexcept = default;
VoxelMap& VoxelMap::operator=(VoxelMap&&) noexcept = default;

InsertReport VoxelMap::insert(const std::vector<Vec3>& points) {
  const auto start = std::chrono::steady_clock::now();
  InsertReport report;
  std::unordered_set<VoxelKey, VoxelKeyHash> touched;

  for (const Vec3& p : points) {
    if (!p.allFinite()) {
      ++report.skipped_nonfinite;
      continue;
    }
    if (config_.min_point_distance > 0.0 &&
        !radius_neighbors(p, config_.min_point_distance, 1).empty()) {
      ++report.filtered_close;
      continue;
    }
    const VoxelKey key = voxel_key_of(p, config_.voxel_size);
    auto it = voxels_.find(key);
    if (it == voxels_.end()) {
      const double half = 0.5 * config_.voxel_size;
      const Vec3 center((key.ix + 0.5) * config_.voxel_size, (key.iy + 0.5) * config_.voxel_size,
                        (key.iz + 0.5) * config_.voxel_size);
      it = voxels_.emplace(key, std::make_unique<Octree>(center, half)).first;
      ++report.new_voxels;
    }
    it->second->insert({p, points_.size()}, config_.leaf_capacity, config_.min_leaf_edge);
    points_.push_back(p);
    ++report.inserted;
    touched.insert(key);
  }
  report.touched_voxels = static_cast<int>(touched.size());
  report.elapsed_us =
      std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<Neighbor> VoxelMap::radius_neighbors(const Vec3& query, double r, int max_k) const {
  std::vector<Neighbor> out;
  if (r <= 0.0 || max_k < 1 || voxels_.empty()) return out;
  const double r2 = r * r;

  // Bounded max-heap of the best max_k candidates.
  std::priority_queue<HeapItem> heap;
  auto visit = [&](const Entry& e, double d2) {
    HeapItem item{d2, e.index, e.p};
    if (static_cast<int>(heap.size()) < max_k) {
      heap.push(item);
    } else if (item < heap.top()) {
      heap.pop();
      heap.push(item);
    }
  };

  const double vs = config_.voxel_size;
  const int64_t x0 = static_cast<int64_t>(std::floor((query.x() - r) / vs));
  const int64_t x1 = static_cast<int64_t>(std::floor((query.x() + r) / vs));
  const int64_t y0 = static_cast<int64_t>(std::floor((query.y() - r) / vs));
  const int64_t y1 = static_cast<int64_t>(std::floor((query.y() + r) / vs));
  const int64_t z0 = static_cast<int64_t>(std::floor((query.z() - r) / vs));
  const int64_t z1 = static_cast<int64_t>(std::floor((query.z() + r) / vs));
  for (int64_t ix = x0; ix <= x1; ++ix) {
    for (int64_t iy = y0; iy <= y1; ++iy) {
      for (int64_t iz = z0; iz <= z1; ++iz) {
        auto it = voxels_.find({ix, iy, iz});
        if (it == voxels_.end()) continue;
        it->second->collect(query, r2, visit);
      }
    }
  }

  out.resize(heap.size());
  for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    const HeapItem& top = heap.top();
    out[i] = {top.p, std::sqrt(top.d2), top.index};
    heap.pop();
  }
  return out;
}

std::map<VoxelKey, std::string> VoxelMap::fingerprints() const {
  std::map<VoxelKey, std::string> out;
  for (const auto& [key, tree] : voxels_) {
    std::ostringstream os;
    tree->serialize(os);
    out.emplace(key, os.str());
  }
  return out;
}

}  // namespace odomkit
