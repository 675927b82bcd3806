#include <doctest.h>

#include <random>
#include <set>

#include "odomkit/bench.hpp"
#include "odomkit/kdtree.hpp"
#include "odomkit/voxel_map.hpp"
#include "oracles.hpp"

using namespace odomkit;

namespace {

// Linear-scan oracle with the same (distance, insertion index) contract.
std::vector<Neighbor> brute_force(const std::vector<Vec3>& pts, const Vec3& q, double r,
                                  int max_k) {
  std::vector<Neighbor> all;
  for (size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 <= r * r) all.push_back({pts[i], std::sqrt(d2), i});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.index < b.index;
  });
  if (static_cast<int>(all.size()) > max_k) all.resize(max_k);
  return all;
}

bool same_answers(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].index != b[i].index || a[i].dist != b[i].dist) return false;
  }
  return true;
}

VoxelMap::Config no_filter() {
  VoxelMap::Config cfg;
  cfg.min_point_distance = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("insert one point creates one voxel") {
  VoxelMap map(no_filter());
  const auto report = map.insert({Vec3(0.2, 0.3, 0.4)});
  CHECK(report.new_voxels == 1);
  CHECK(report.touched_voxels == 1);
  CHECK(map.size() == 1);
}

TEST_CASE("min-distance filter controls duplicate insertion") {
  VoxelMap unfiltered(no_filter());
  unfiltered.insert({Vec3(1, 1, 1)});
  unfiltered.insert({Vec3(1, 1, 1)});
  CHECK(unfiltered.size() == 2);

  VoxelMap::Config cfg;
  cfg.min_point_distance = 0.01;
  VoxelMap filtered(cfg);
  filtered.insert({Vec3(1, 1, 1)});
  const auto report = filtered.insert({Vec3(1, 1, 1)});
  CHECK(filtered.size() == 1);
  CHECK(report.filtered_close == 1);
}

TEST_CASE("non-finite points are skipped and counted") {
  VoxelMap map(no_filter());
  const auto report = map.insert(
      {Vec3(0, 0, 0), Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0),
       Vec3(std::numeric_limits<double>::infinity(), 1, 1)});
  CHECK(report.skipped_nonfinite == 2);
  CHECK(map.size() == 1);
}

TEST_CASE("touched voxels equal the exact voxel cover of the batch") {
  std::mt19937 rng(80);
  std::uniform_real_distribution<double> u(0.0, 0.999);
  std::vector<Vec3> pts;
  for (int i = 0; i < 10000; ++i) pts.emplace_back(u(rng), u(rng), u(rng));

  VoxelMap::Config cfg = no_filter();
  cfg.voxel_size = 0.5;
  VoxelMap map(cfg);
  const auto report = map.insert(pts);

  std::set<std::tuple<int64_t, int64_t, int64_t>> cover;
  for (const auto& p : pts) {
    const VoxelKey k = voxel_key_of(p, cfg.voxel_size);
    cover.insert({k.ix, k.iy, k.iz});
  }
  CHECK(report.touched_voxels == static_cast<int>(cover.size()));
  CHECK(report.touched_voxels <= 8);
  CHECK(map.size() == pts.size());
}

TEST_CASE("query at a stored point returns it first at distance zero") {
  VoxelMap map(no_filter());
  map.insert({Vec3(0.5, 0.5, 0.5), Vec3(0.52, 0.5, 0.5)});
  const auto res = map.radius_neighbors(Vec3(0.5, 0.5, 0.5), 0.1, 4);
  REQUIRE(!res.empty());
  CHECK(res[0].dist == 0.0);
  CHECK(res[0].index == 0);
}

TEST_CASE("query farther than r from all points is empty") {
  VoxelMap map(no_filter());
  map.insert({Vec3(0, 0, 0)});
  CHECK(map.radius_neighbors(Vec3(10, 10, 10), 0.5, 3).empty());
  VoxelMap empty_map(no_filter());
  CHECK(empty_map.radius_neighbors(Vec3(0, 0, 0), 1.0, 3).empty());
}

TEST_CASE("uniform cloud queries match the brute-force oracle") {
  std::mt19937 rng(81);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  VoxelMap map(no_filter());
  map.insert(pts);
  for (int q = 0; q < 50; ++q) {
    const Vec3 query(u(rng), u(rng), u(rng));
    CHECK(same_answers(map.radius_neighbors(query, 0.3, 5), brute_force(pts, query, 0.3, 5)));
  }
}

TEST_CASE("exactness property over a large random map") {
  std::mt19937 rng(82);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  std::uniform_real_distribution<double> rr(0.2, 3.0);
  std::uniform_int_distribution<int> kk(1, 12);
  std::vector<Vec3> pts;
  for (int i = 0; i < 20000; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  VoxelMap map(no_filter());
  map.insert(pts);
  BaselineKdTree tree;
  tree.build(pts);
  for (int q = 0; q < 500; ++q) {
    const Vec3 query(u(rng), u(rng), u(rng));
    const double r = rr(rng);
    const int k = kk(rng);
    const auto oracle = brute_force(pts, query, r, k);
    CHECK(same_answers(map.radius_neighbors(query, r, k), oracle));
    CHECK(same_answers(tree.radius_neighbors(query, r, k), oracle));
  }
}

TEST_CASE("insertions are local: untouched voxels keep their serialized form") {
  std::mt19937 rng(83);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 5000; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  VoxelMap map(no_filter());
  map.insert(pts);
  const auto before = map.fingerprints();

  // Confine the new batch to the voxel holding the origin.
  std::vector<Vec3> local;
  std::uniform_real_distribution<double> c(0.05, 0.95);
  for (int i = 0; i < 200; ++i) local.emplace_back(c(rng), c(rng), c(rng));
  map.insert(local);
  const auto after = map.fingerprints();

  const VoxelKey target = voxel_key_of(Vec3(0.5, 0.5, 0.5), map.voxel_size());
  int changed = 0;
  for (const auto& [key, fp] : before) {
    if (key == target) continue;
    CHECK(after.at(key) == fp);
  }
  if (before.count(target) && after.at(target) != before.at(target)) changed = 1;
  CHECK(changed == 1);
}

TEST_CASE("identical insertion order reproduces identical structure") {
  std::vector<Vec3> pts;
  std::mt19937 rng(84);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 3000; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  VoxelMap a(no_filter()), b(no_filter());
  a.insert(pts);
  b.insert(pts);
  CHECK(a.fingerprints() == b.fingerprints());
}

TEST_CASE("octree leaves split past capacity") {
  // 100 distinct points in one voxel force subdivision; queries stay exact.
  VoxelMap::Config cfg = no_filter();
  cfg.leaf_capacity = 8;
  VoxelMap map(cfg);
  std::vector<Vec3> pts;
  std::mt19937 rng(85);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  map.insert(pts);
  for (int q = 0; q < 20; ++q) {
    const Vec3 query(u(rng), u(rng), u(rng));
    CHECK(same_answers(map.radius_neighbors(query, 0.25, 6), brute_force(pts, query, 0.25, 6)));
  }
}

TEST_CASE("benchmark smoke run: exact answers and sane csv") {
  BenchWorkload wl;
  wl.frames = 5;
  wl.points_per_frame = 2000;
  wl.queries_per_frame = 10;
  const BenchResult res = benchmark_tree(wl);
  CHECK(res.rows.size() == 5);
  CHECK(res.query_mismatches == 0);
  CHECK(res.total_octree_insert_us > 0.0);
  CHECK(res.total_kdtree_build_us > 0.0);
  const std::string csv = res.to_csv();
  CHECK(csv.rfind("frame,octree_insert_us,octree_query_us,kdtree_build_us,kdtree_query_us\n",
                  0) == 0);
}
