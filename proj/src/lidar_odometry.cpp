#include "odomkit/lidar_odometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <unordered_map>

#include "odomkit/kdtree.hpp"

namespace odomkit {

Scan downsample(const Scan& scan, int target_count) {
  Scan out;
  out.stamp = scan.stamp;
  if (static_cast<int>(scan.points.size()) <= target_count) {
    out.points = scan.points;
    return out;
  }

  // Grow the cell from fine to coarse until the occupied-cell count fits;
  // surface scans make volume-based guesses useless, so start small.
  Vec3 lo = scan.points[0].position, hi = lo;
  for (const auto& p : scan.points) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  const double span = (hi - lo).cwiseMax(1e-6).maxCoeff();
  double cell = span / 2048.0;

  struct Best {
    double d2;
    size_t index;
  };
  std::unordered_map<VoxelKey, Best, VoxelKeyHash> cells;
  for (int attempt = 0; attempt < 80; ++attempt) {
    cells.clear();
    for (size_t i = 0; i < scan.points.size(); ++i) {
      const Vec3& p = scan.points[i].position;
      const VoxelKey key = voxel_key_of(p, cell);
      const Vec3 center((key.ix + 0.5) * cell, (key.iy + 0.5) * cell, (key.iz + 0.5) * cell);
      const double d2 = (p - center).squaredNorm();
      auto it = cells.find(key);
      if (it == cells.end()) {
        cells.emplace(key, Best{d2, i});
      } else if (d2 < it->second.d2 || (d2 == it->second.d2 && i < it->second.index)) {
        it->second = {d2, i};
      }
    }
    if (static_cast<int>(cells.size()) <= target_count) break;
    cell *= 1.26;  // roughly doubles the cell volume
  }

  std::vector<size_t> keep;
  keep.reserve(cells.size());
  for (const auto& [key, best] : cells) keep.push_back(best.index);
  std::sort(keep.begin(), keep.end());
  out.points.reserve(keep.size());
  for (size_t i : keep) out.points.push_back(scan.points[i]);
  return out;
}

PcaResult pca_of(const std::vector<Vec3>& neighbors) {
  PcaResult res;
  if (neighbors.size() < 3) return res;
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : neighbors) mean += p;
  mean /= static_cast<double>(neighbors.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : neighbors) {
    const Vec3 d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(neighbors.size());

  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // ascending eigenvalues; sigma_i descending
  const double l1 = std::max(es.eigenvalues()(2), 0.0);
  const double l2 = std::max(es.eigenvalues()(1), 0.0);
  const double l3 = std::max(es.eigenvalues()(0), 0.0);
  const double s1 = std::sqrt(l1), s2 = std::sqrt(l2), s3 = std::sqrt(l3);
  if (s1 <= 0.0) return res;  // all neighbors coincide

  res.sigma_desc = Vec3((s1 - s2) / s1, (s2 - s3) / s1, s3 / (s1 + s2 + s3));
  res.principal = es.eigenvectors().col(2);
  res.normal = es.eigenvectors().col(0);
  res.centroid = mean;
  res.sigma = Vec3(s1, s2, s3);
  res.spread = s1;
  res.valid = true;
  return res;
}

double correspondence_weight(FeatureClass cls, const Vec3& direction,
                             const std::vector<Vec3>& neighbors, double d_max,
                             double sigma3d_max) {
  if (neighbors.empty() || d_max <= 0.0) return 0.0;
  if (cls == FeatureClass::point) {
    const PcaResult pca = pca_of(neighbors);
    if (!pca.valid) return 0.0;
    return std::clamp(pca.sigma_desc(2) / sigma3d_max, 0.0, 1.0);
  }
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : neighbors) mean += p;
  mean /= static_cast<double>(neighbors.size());
  const Vec3 n = direction.normalized();
  const Mat3 a = cls == FeatureClass::line ? Mat3(Mat3::Identity() - n * n.transpose())
                                           : Mat3(n * n.transpose());
  double sum = 0.0;
  for (const Vec3& p : neighbors) {
    const Vec3 d = p - mean;
    sum += d.dot(a * d);
  }
  return std::clamp(1.0 - sum / (static_cast<double>(neighbors.size()) * d_max), 0.0, 1.0);
}

std::vector<FeaturePoint> classify_features(const Scan& scan, const ClassifyConfig& config) {
  std::vector<FeaturePoint> out;
  if (scan.points.size() < static_cast<size_t>(config.k)) return out;

  std::vector<Vec3> pts;
  pts.reserve(scan.points.size());
  for (const auto& p : scan.points) pts.push_back(p.position);
  BaselineKdTree tree;
  tree.build(pts);

  std::vector<Vec3> nb;
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto found = tree.radius_neighbors(pts[i], config.r, config.k);
    if (static_cast<int>(found.size()) < config.k) continue;
    nb.clear();
    for (const auto& n : found) nb.push_back(n.point);
    const PcaResult pca = pca_of(nb);
    if (!pca.valid) continue;

    FeaturePoint f;
    f.position = pts[i];
    f.sigma = pca.sigma_desc;
    f.source_index = i;
    if (pca.sigma_desc(0) > config.line_threshold) {
      f.cls = FeatureClass::line;
      f.direction = pca.principal;
    } else if (pca.sigma_desc(1) > config.plane_threshold) {
      f.cls = FeatureClass::plane;
      f.direction = pca.normal;
    } else if (pca.sigma_desc(2) > config.point_threshold &&
               pca.spread <= config.point_max_spread) {
      f.cls = FeatureClass::point;
    } else {
      continue;
    }
    f.quality = correspondence_weight(f.cls, f.direction, nb, config.d_max, config.sigma3d_max);
    out.push_back(f);
  }
  return out;
}

IcpSystem icp_residuals(const std::vector<Correspondence>& correspondences, const Pose& pose) {
  int rows = 0;
  for (const auto& c : correspondences) rows += c.target.kind == FeatureClass::plane ? 1 : 3;
  IcpSystem sys;
  sys.residual.resize(rows);
  sys.jacobian.resize(rows, 6);

  const Mat3 r = pose.rotation.toRotationMatrix();
  int row = 0;
  for (const auto& c : correspondences) {
    const Vec3 moved = r * c.feature.position + pose.translation;
    const Vec3 diff = c.target.point - moved;
    const Mat3 dmoved_dp = Mat3::Identity();
    const Mat3 dmoved_dth = -r * skew(c.feature.position);
    switch (c.target.kind) {
      case FeatureClass::point:
        sys.residual.segment<3>(row) = c.weight * diff;
        sys.jacobian.block<3, 3>(row, 0) = -c.weight * dmoved_dp;
        sys.jacobian.block<3, 3>(row, 3) = -c.weight * dmoved_dth;
        row += 3;
        break;
      case FeatureClass::line: {
        const Mat3 vx = skew(c.target.direction);
        sys.residual.segment<3>(row) = c.weight * (vx * diff);
        sys.jacobian.block<3, 3>(row, 0) = -c.weight * vx * dmoved_dp;
        sys.jacobian.block<3, 3>(row, 3) = -c.weight * vx * dmoved_dth;
        row += 3;
        break;
      }
      case FeatureClass::plane: {
        const Vec3 n = c.target.direction;
        sys.residual(row) = c.weight * n.dot(diff);
        sys.jacobian.block<1, 3>(row, 0) = -c.weight * (n.transpose() * dmoved_dp);
        sys.jacobian.block<1, 3>(row, 3) = -c.weight * (n.transpose() * dmoved_dth);
        row += 1;
        break;
      }
    }
  }
  return sys;
}

Scan deskew(const Scan& scan, const Pose& pose_at_stamp, const Pose& pose_at_end,
            double sweep_duration) {
  Scan out;
  out.stamp = scan.stamp;
  out.points.reserve(scan.points.size());
  const Pose anchor_inv = inverse(pose_at_stamp);
  for (const auto& p : scan.points) {
    const double s = sweep_duration > 0 ? std::clamp(p.relative_time / sweep_duration, 0.0, 1.0)
                                        : 0.0;
    const Pose at_fire = interpolate(pose_at_stamp, pose_at_end, s);
    out.points.push_back({apply(compose(anchor_inv, at_fire), p.position), p.relative_time});
  }
  return out;
}

namespace {

struct Association {
  std::vector<Correspondence> correspondences;
  std::vector<char> matched;  // per feature: 0 none, 1 used, 2 rejected-low-weight
};

Association associate(const std::vector<FeaturePoint>& features, const VoxelMap& map,
                      const Pose& pose, const LioConfig& cfg) {
  Association out;
  out.matched.assign(features.size(), 0);
  const Mat3 r = pose.rotation.toRotationMatrix();
  std::vector<Vec3> nb;

  for (size_t fi = 0; fi < features.size(); ++fi) {
    const FeaturePoint& f = features[fi];
    const Vec3 p_w = r * f.position + pose.translation;
    const auto found = map.radius_neighbors(p_w, cfg.corr_radius, cfg.corr_neighbors);
    if (found.empty()) continue;

    Correspondence c;
    c.feature = f;
    double distance = 0.0;
    if (f.cls == FeatureClass::point) {
      c.target.kind = FeatureClass::point;
      c.target.point = found[0].point;
      distance = found[0].dist;
      nb.clear();
      for (const auto& n : found) nb.push_back(n.point);
      const double w_map = correspondence_weight(FeatureClass::point, Vec3::Zero(), nb,
                                                 cfg.classify.d_max, cfg.classify.sigma3d_max);
      if (w_map < cfg.point_min_map_quality) continue;
      c.weight = f.quality * w_map;
    } else {
      const int needed =
          f.cls == FeatureClass::plane ? cfg.min_plane_neighbors : cfg.min_line_neighbors;
      if (static_cast<int>(found.size()) < needed) continue;
      nb.clear();
      for (const auto& n : found) nb.push_back(n.point);
      const PcaResult pca = pca_of(nb);
      if (!pca.valid) continue;
      // The target must actually look like the model being fit; mixed
      // neighborhoods near edges make biased targets.
      if (f.cls == FeatureClass::plane && pca.sigma(2) > cfg.plane_fit_max_rms) continue;
      if (f.cls == FeatureClass::line && pca.sigma(1) > cfg.line_fit_max_rms) continue;
      c.target.kind = f.cls;
      c.target.point = pca.centroid;
      c.target.direction = f.cls == FeatureClass::plane ? pca.normal : pca.principal;
      distance = f.cls == FeatureClass::plane
                     ? std::abs(c.target.direction.dot(p_w - pca.centroid))
                     : (c.target.direction.cross(p_w - pca.centroid)).norm();
      c.weight = f.quality * correspondence_weight(f.cls, c.target.direction, nb,
                                                   cfg.classify.d_max, cfg.classify.sigma3d_max);
    }
    if (distance > cfg.reject_distance) continue;
    if (c.weight < cfg.min_weight) {
      out.matched[fi] = 2;
      continue;
    }
    out.matched[fi] = 1;
    out.correspondences.push_back(std::move(c));
  }
  return out;
}

}  // namespace

RegisterResult register_scan(const Scan& scan, VoxelMap& map, const RegisterPrediction& pred,
                             const LioConfig& cfg) {
  RegisterResult result;
  result.state = pred.predicted;

  const Scan fixed = deskew(scan, pred.predicted.pose(), pred.sweep_end_pose,
                            pred.sweep_duration);
  const Scan ds = downsample(fixed, cfg.downsample_target);
  std::vector<FeaturePoint> features = classify_features(ds, cfg.classify);

  if (map.empty()) {
    // Bootstrap: the first scan becomes the map at the prediction pose.
    std::vector<Vec3> world;
    world.reserve(ds.points.size());
    const Pose pose = pred.predicted.pose();
    for (const auto& p : ds.points) world.push_back(apply(pose, p.position));
    map.insert(world);
    result.report.prior_dominated = false;
    return result;
  }

  Association assoc;
  for (int round = 0; round < cfg.reassociation_rounds; ++round) {
    result.report.rounds = round + 1;
    assoc = associate(features, map, result.state.pose(), cfg);
    if (static_cast<int>(assoc.correspondences.size()) < cfg.min_correspondences) {
      result.state = pred.predicted;
      result.report.prior_dominated = true;
      result.report.correspondences = static_cast<int>(assoc.correspondences.size());
      return result;
    }

    Window w;
    int prev_id = -1;
    if (pred.previous_state && pred.preintegration) {
      prev_id = w.add_state(*pred.previous_state);
    }
    const int cur = w.add_state(result.state);
    if (prev_id >= 0) {
      w.add_factor(make_state_prior_factor(prev_id, *pred.previous_state,
                                           1e8 * Mat15::Identity()));
      w.add_factor(make_preintegration_factor(prev_id, cur, *pred.preintegration, cfg.gravity));
    }
    if (cfg.use_prior) {
      // Along directions the scan carries (near) no information, the motion
      // prior takes over: its information is boosted to the scale of the
      // well-observed directions there, and only there.
      Mat6 prior_info = pred.pose_information;
      {
        const IcpSystem sys = icp_residuals(assoc.correspondences, result.state.pose());
        const Mat6 hp = sys.jacobian.transpose() * sys.jacobian /
                        (cfg.sensor_noise * cfg.sensor_noise);
        Eigen::SelfAdjointEigenSolver<Mat6> es(hp);
        const double median = es.eigenvalues()(3);
        for (const auto& dir :
             degenerate_directions_of(hp, cfg.solve.degeneracy_rel_eig)) {
          prior_info += (0.1 * median) * dir * dir.transpose();
        }
      }
      w.add_factor(make_pose_prior_factor(cur, pred.predicted.pose(), prior_info));
    }
    // Quality weight over the per-point range noise puts the scan rows on
    // the same footing as the preintegration factor.
    const double info_scale = 1.0 / std::max(cfg.sensor_noise, 1e-4);
    for (const auto& c : assoc.correspondences) {
      std::unique_ptr<Factor> f;
      const double wgt = c.weight * info_scale;
      switch (c.target.kind) {
        case FeatureClass::point:
          f = make_icp_point_factor(cur, c.feature.position, c.target.point, wgt);
          break;
        case FeatureClass::line:
          f = make_icp_line_factor(cur, c.feature.position, c.target.point, c.target.direction,
                                   wgt);
          break;
        case FeatureClass::plane:
          f = make_icp_plane_factor(cur, c.feature.position, c.target.point, c.target.direction,
                                    wgt);
          break;
      }
      f->kernel = {RobustKernel::Type::huber, cfg.huber_delta};
      w.add_factor(std::move(f));
    }

    const SolveReport rep = w.optimize(cfg.solve);
    if (round == 0) result.report.initial_cost = rep.initial_cost;
    result.report.final_cost = rep.final_cost;
    result.state = w.state(cur);

    if (round + 1 == cfg.reassociation_rounds) {
      // Degeneracy of the scan-matching information alone, pose block only.
      const Eigen::MatrixXd h = w.hessian(
          {FactorKind::icp_point, FactorKind::icp_line, FactorKind::icp_plane});
      const int off = w.tangent_offset(cur);
      Mat6 hp;
      const int idx[6] = {0, 1, 2, 6, 7, 8};
      for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) hp(a, b) = h(off + idx[a], off + idx[b]);
      }
      result.report.pose_information = hp;
      for (const auto& dir : degenerate_directions_of(hp, cfg.solve.degeneracy_rel_eig)) {
        result.report.degenerate_directions.push_back(dir);
      }
    }
  }

  // Report statistics from the final association.
  result.report.features_total = static_cast<int>(features.size());
  result.report.correspondences = static_cast<int>(assoc.correspondences.size());
  double weighted_sum = 0.0;
  const IcpSystem sys = icp_residuals(assoc.correspondences, result.state.pose());
  int row = 0;
  for (const auto& c : assoc.correspondences) {
    const int n = c.target.kind == FeatureClass::plane ? 1 : 3;
    weighted_sum += sys.residual.segment(row, n).norm();
    row += n;
    switch (c.target.kind) {
      case FeatureClass::point: ++result.report.inliers_point; break;
      case FeatureClass::line: ++result.report.inliers_line; break;
      case FeatureClass::plane: ++result.report.inliers_plane; break;
    }
  }
  result.report.mean_weighted_residual =
      assoc.correspondences.empty() ? 0.0 : weighted_sum / assoc.correspondences.size();
  result.report.last_correspondences = assoc.correspondences;

  // Map update: unmatched surface features are new geometry and go in gated
  // by their own distribution quality; unmatched point features stay out
  // (isolated blobs make noise targets, and real corners are covered by
  // their surface neighbors); matched features go in above the weight gate.
  std::vector<double> insert_weight(ds.points.size(), -1.0);
  for (size_t fi = 0; fi < features.size(); ++fi) {
    if (assoc.matched[fi] == 0) insert_weight[features[fi].source_index] = features[fi].quality;
    if (assoc.matched[fi] == 2) insert_weight[features[fi].source_index] = 0.0;
    if (features[fi].cls == FeatureClass::point) {
      insert_weight[features[fi].source_index] = 0.0;
    }
  }
  for (const auto& c : assoc.correspondences) {
    if (c.feature.cls == FeatureClass::point) continue;
    insert_weight[c.feature.source_index] = c.weight;
  }

  const Pose final_pose = result.state.pose();
  std::vector<Vec3> to_insert;
  to_insert.reserve(ds.points.size());
  for (size_t i = 0; i < ds.points.size(); ++i) {
    if (insert_weight[i] < cfg.insert_min_weight) continue;
    to_insert.push_back(apply(final_pose, ds.points[i].position));
  }
  map.insert(to_insert);
  return result;
}

}  // namespace odomkit
