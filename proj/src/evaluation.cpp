#include "odomkit/evaluation.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace odomkit {

std::optional<Association> associate(const EvalTrajectory& est, const EvalTrajectory& gt,
                                     double max_dt, AssociationError* error) {
  Association out;
  if (est.empty() || gt.empty() || max_dt <= 0.0) {
    if (error) error->message = "empty trajectory or non-positive max_dt";
    return std::nullopt;
  }
  size_t lo = 0;  // gt poses are consumed in order; each used at most once
  for (size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    while (lo + 1 < gt.size() && gt[lo + 1].t <= t) ++lo;
    size_t best = lo;
    if (lo + 1 < gt.size() &&
        std::abs(gt[lo + 1].t - t) < std::abs(gt[lo].t - t)) {
      best = lo + 1;
    }
    if (std::abs(gt[best].t - t) > max_dt) continue;
    if (!out.pairs.empty() && out.pairs.back().second == best) {
      // keep the closer of the two est poses contending for this gt pose
      const double prev_dt = std::abs(est[out.pairs.back().first].t - gt[best].t);
      if (std::abs(gt[best].t - t) < prev_dt) out.pairs.back().first = i;
      continue;
    }
    out.pairs.emplace_back(i, best);
  }
  if (out.pairs.empty()) {
    if (error) error->message = "no timestamp pairs within max_dt";
    return std::nullopt;
  }
  return out;
}

std::optional<Pose> align_umeyama(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                                  AlignmentError* error) {
  if (est.size() != gt.size() || est.size() < 3) {
    if (error) {
      error->message = "need at least 3 point pairs";
      error->rank = 0;
    }
    return std::nullopt;
  }
  const double n = static_cast<double>(est.size());
  Vec3 mean_e = Vec3::Zero(), mean_g = Vec3::Zero();
  for (size_t i = 0; i < est.size(); ++i) {
    mean_e += est[i];
    mean_g += gt[i];
  }
  mean_e /= n;
  mean_g /= n;

  Mat3 cross = Mat3::Zero();
  for (size_t i = 0; i < est.size(); ++i) {
    cross += (gt[i] - mean_g) * (est[i] - mean_e).transpose();
  }
  cross /= n;

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // rank 2 (planar) is fine; rank <= 1 means collinear points
  if (sv(1) < 1e-12 * std::max(sv(0), 1.0)) {
    if (error) {
      error->message = "degenerate point configuration (collinear), rank 1";
      error->rank = sv(0) < 1e-15 ? 0 : 1;
    }
    return std::nullopt;
  }
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    s(2, 2) = -1.0;  // proper rotation, never a reflection
  }
  Pose out;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  out.rotation = Quat(r).normalized();
  out.translation = mean_g - r * mean_e;
  return out;
}

std::optional<AteResult> ate(const EvalTrajectory& est, const EvalTrajectory& gt, double max_dt,
                             std::string* error) {
  AssociationError assoc_err;
  const auto assoc = associate(est, gt, max_dt, &assoc_err);
  if (!assoc) {
    if (error) *error = assoc_err.message;
    return std::nullopt;
  }
  std::vector<Vec3> pe, pg;
  pe.reserve(assoc->pairs.size());
  pg.reserve(assoc->pairs.size());
  for (const auto& [ie, ig] : assoc->pairs) {
    pe.push_back(est[ie].pose.translation);
    pg.push_back(gt[ig].pose.translation);
  }
  AlignmentError align_err;
  const auto alignment = align_umeyama(pe, pg, &align_err);
  if (!alignment) {
    if (error) *error = align_err.message;
    return std::nullopt;
  }

  AteResult out;
  out.alignment = *alignment;
  double sq_sum = 0.0;
  for (size_t i = 0; i < pe.size(); ++i) {
    const double e = (pg[i] - apply(*alignment, pe[i])).norm();
    out.per_pose_errors.push_back(e);
    sq_sum += e * e;
    out.max = std::max(out.max, e);
  }
  out.rmse = std::sqrt(sq_sum / static_cast<double>(pe.size()));
  return out;
}

double path_length(const EvalTrajectory& traj) {
  double len = 0.0;
  for (size_t i = 1; i < traj.size(); ++i) {
    len += (traj[i].pose.translation - traj[i - 1].pose.translation).norm();
  }
  return len;
}

}  // namespace odomkit
