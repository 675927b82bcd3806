// Dynamic octree map: a hash table from voxel indices to per-voxel octrees.
// Inserting points touches only the octrees of the voxels they fall in, so
// the cost per batch stays flat as the map grows. Queries are exact: results
// always equal a brute-force scan with (distance, insertion index) ordering.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "odomkit/geometry.hpp"

namespace odomkit {

struct VoxelKey {
  int64_t ix = 0, iy = 0, iz = 0;
  bool operator==(const VoxelKey&) const = default;
  bool operator<(const VoxelKey& o) const {
    if (ix != o.ix) return ix < o.ix;
    if (iy != o.iy) return iy < o.iy;
    return iz < o.iz;
  }
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const {
    // three-prime mix, good spread for grid indices
    return static_cast<size_t>(k.ix * 73856093LL ^ k.iy * 19349669LL ^ k.iz * 83492791LL);
  }
};

inline VoxelKey voxel_key_of(const Vec3& p, double voxel_size) {
  return {static_cast<int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<int64_t>(std::floor(p.z() / voxel_size))};
}

struct Neighbor {
  Vec3 point;
  double dist = 0.0;
  uint64_t index = 0;  // global insertion index; the deterministic tie-break
};

struct InsertReport {
  int new_voxels = 0;
  int touched_voxels = 0;
  int inserted = 0;
  int skipped_nonfinite = 0;
  int filtered_close = 0;  // rejected by the min-distance filter
  double elapsed_us = 0.0;
};

class VoxelMap {
 public:
  struct Config {
    double voxel_size = 1.0;
    int leaf_capacity = 32;
    double min_leaf_edge = 0.05;
    double min_point_distance = 0.05;  // 0 disables deduplication
  };

  VoxelMap() : VoxelMap(Config{}) {}
  explicit VoxelMap(const Config& config);
  ~VoxelMap();
  VoxelMap(VoxelMap&&) noexcept;
  VoxelMap& operator=(VoxelMap&&) noexcept;

  InsertReport insert(const std::vector<Vec3>& points);

  // Up to max_k nearest stored points within radius r, sorted by distance
  // (ties by smaller insertion index). Only voxels intersecting the query
  // ball are visited.
  std::vector<Neighbor> radius_neighbors(const Vec3& query, double r, int max_k) const;

  size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  double voxel_size() const { return config_.voxel_size; }
  const Config& config() const { return config_; }

  // Stored points in insertion order (the global index order).
  const std::vector<Vec3>& points() const { return points_; }

  // Structural serialization per voxel; used to verify insertion locality.
  std::map<VoxelKey, std::string> fingerprints() const;

 private:
  struct Octree;
  Config config_;
  std::unordered_map<VoxelKey, std::unique_ptr<Octree>, VoxelKeyHash> voxels_;
  std::vector<Vec3> points_;
};

}  // namespace odomkit
