#include "odomkit/bench.hpp"

#include <chrono>
#include <random>
#include <sstream>

#include "odomkit/kdtree.hpp"
#include "odomkit/voxel_map.hpp"

namespace odomkit {

namespace {
double now_us() {
  return std::chrono::duration<double, std::micro>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}
}  // namespace

std::string BenchResult::to_csv() const {
  std::ostringstream os;
  os << "frame,octree_insert_us,octree_query_us,kdtree_build_us,kdtree_query_us\n";
  for (const auto& r : rows) {
    os << r.frame << ',' << r.octree_insert_us << ',' << r.octree_query_us << ','
       << r.kdtree_build_us << ',' << r.kdtree_query_us << '\n';
  }
  return os.str();
}

BenchResult benchmark_tree(const BenchWorkload& workload) {
  BenchResult result;
  std::mt19937 rng(workload.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> radius(0.5, 2.0);
  std::uniform_int_distribution<int> kdist(1, 10);

  VoxelMap::Config cfg;
  cfg.min_point_distance = 0.0;  // both structures must hold identical point sets
  VoxelMap map(cfg);
  BaselineKdTree tree;

  const double sensor_speed = 0.5;  // meters per frame; keeps opening new voxels
  const double spread = 20.0;

  for (int f = 0; f < workload.frames; ++f) {
    const Vec3 sensor(sensor_speed * f, 0.0, 1.5);
    std::vector<Vec3> batch;
    batch.reserve(workload.points_per_frame);
    for (int i = 0; i < workload.points_per_frame; ++i) {
      batch.emplace_back(sensor + spread * Vec3(unit(rng), unit(rng), 0.1 * unit(rng)));
    }

    BenchFrameRow row;
    row.frame = f + 1;

    double t0 = now_us();
    map.insert(batch);
    row.octree_insert_us = now_us() - t0;

    t0 = now_us();
    tree.build(map.points());
    row.kdtree_build_us = now_us() - t0;

    std::vector<Vec3> queries;
    std::vector<double> radii;
    std::vector<int> ks;
    for (int qi = 0; qi < workload.queries_per_frame; ++qi) {
      queries.emplace_back(sensor + spread * Vec3(unit(rng), unit(rng), 0.1 * unit(rng)));
      radii.push_back(radius(rng));
      ks.push_back(kdist(rng));
    }

    std::vector<std::vector<Neighbor>> octree_answers(queries.size());
    t0 = now_us();
    for (size_t qi = 0; qi < queries.size(); ++qi) {
      octree_answers[qi] = map.radius_neighbors(queries[qi], radii[qi], ks[qi]);
    }
    row.octree_query_us = now_us() - t0;

    std::vector<std::vector<Neighbor>> kdtree_answers(queries.size());
    t0 = now_us();
    for (size_t qi = 0; qi < queries.size(); ++qi) {
      kdtree_answers[qi] = tree.radius_neighbors(queries[qi], radii[qi], ks[qi]);
    }
    row.kdtree_query_us = now_us() - t0;

    if (workload.check_exactness) {
      for (size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& a = octree_answers[qi];
        const auto& b = kdtree_answers[qi];
        if (a.size() != b.size()) {
          ++result.query_mismatches;
          continue;
        }
        for (size_t n = 0; n < a.size(); ++n) {
          if (a[n].index != b[n].index || a[n].dist != b[n].dist) {
            ++result.query_mismatches;
            break;
          }
        }
      }
    }

    result.total_octree_insert_us += row.octree_insert_us;
    result.total_kdtree_build_us += row.kdtree_build_us;
    result.rows.push_back(row);
  }
  return result;
}

}  // namespace odomkit
