// Insertion/query benchmark of the dynamic octree against the rebuild-from-
// scratch KD-tree baseline, with per-frame exactness cross-checking.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odomkit/geometry.hpp"

namespace odomkit {

struct BenchWorkload {
  int frames = 200;
  int points_per_frame = 10000;
  int queries_per_frame = 20;
  uint32_t seed = 1;
  bool check_exactness = true;
};

struct BenchFrameRow {
  int frame = 0;
  double octree_insert_us = 0.0;
  double octree_query_us = 0.0;
  double kdtree_build_us = 0.0;
  double kdtree_query_us = 0.0;
};

struct BenchResult {
  std::vector<BenchFrameRow> rows;
  double total_octree_insert_us = 0.0;
  double total_kdtree_build_us = 0.0;
  long query_mismatches = 0;  // exactness cross-check failures, expected 0

  std::string to_csv() const;
};

// Simulates a moving sensor dropping `points_per_frame` points per frame into
// both structures; the KD-tree is rebuilt over all accumulated points each
// frame, the octree absorbs only the new batch.
BenchResult benchmark_tree(const BenchWorkload& workload);

}  // namespace odomkit
