#include "odomkit/factor_graph.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace odomkit {

double evaluate_robust_weight(double residual_norm, const RobustKernel& kernel) {
  if (kernel.type == RobustKernel::Type::none) return 1.0;
  if (residual_norm <= kernel.delta) return 1.0;
  return kernel.delta / residual_norm;
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& info) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rel_tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double max_ev = es.eigenvalues().cwiseAbs().maxCoeff();
  const double tol = rel_tol * std::max(1.0, max_ev);
  Eigen::VectorXd inv = es.eigenvalues();
  for (int i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > tol ? 1.0 / inv[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

class PreintegrationFactor final : public Factor {
 public:
  PreintegrationFactor(int i, int j, PreintegratedDelta delta, const Vec3& gravity)
      : delta_(std::move(delta)), gravity_(gravity) {
    state_ids_ = {i, j};
    Mat15 info = pseudo_inverse(delta_.covariance + 1e-16 * Mat15::Identity());
    sqrt_info_ = symmetric_sqrt(info);
  }

  FactorKind kind() const override { return FactorKind::preintegration; }
  int dim() const override { return 15; }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    return preintegration_residual(delta_, *xs[0], *xs[1], gravity_);
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    const State& si = *xs[0];
    const State& sj = *xs[1];
    const double dt = delta_.dt_total;
    const BiasPair bias_i{si.ba, si.bg};
    const PreintegratedDelta d = correct_for_bias(delta_, bias_i);

    const Mat3 r_wi = si.q.toRotationMatrix().transpose();
    const Vec3 u_p = sj.p - si.p - si.v * dt - 0.5 * gravity_ * dt * dt;
    const Vec3 u_v = sj.v - si.v - gravity_ * dt;
    const Quat q_ij = si.q.conjugate() * sj.q;
    const Vec3 phi = log_so3(Quat(d.gamma.conjugate() * q_ij));
    const Mat3 jr_inv = right_jacobian_inv_so3(phi);
    const Mat3 jl_inv = left_jacobian_inv_so3(phi);
    const Vec3 dbg0 = si.bg - delta_.linearization_bias.bg;

    jacs.assign(2, Eigen::MatrixXd::Zero(15, 15));
    Eigen::MatrixXd& ji = jacs[0];
    Eigen::MatrixXd& jj = jacs[1];

    ji.block<3, 3>(0, 0) = r_wi;
    ji.block<3, 3>(0, 3) = r_wi * dt;
    ji.block<3, 3>(0, 6) = -skew(r_wi * u_p);
    ji.block<3, 3>(0, 9) = delta_.dalpha_dba;
    ji.block<3, 3>(0, 12) = delta_.dalpha_dbg;
    jj.block<3, 3>(0, 0) = -r_wi;

    ji.block<3, 3>(3, 3) = r_wi;
    ji.block<3, 3>(3, 6) = -skew(r_wi * u_v);
    ji.block<3, 3>(3, 9) = delta_.dbeta_dba;
    ji.block<3, 3>(3, 12) = delta_.dbeta_dbg;
    jj.block<3, 3>(3, 3) = -r_wi;

    ji.block<3, 3>(6, 6) = -jr_inv * q_ij.toRotationMatrix().transpose();
    ji.block<3, 3>(6, 12) =
        -jl_inv * right_jacobian_so3(delta_.dgamma_dbg * dbg0) * delta_.dgamma_dbg;
    jj.block<3, 3>(6, 6) = jr_inv;

    ji.block<3, 3>(9, 9) = -Mat3::Identity();
    jj.block<3, 3>(9, 9) = Mat3::Identity();
    ji.block<3, 3>(12, 12) = -Mat3::Identity();
    jj.block<3, 3>(12, 12) = Mat3::Identity();
  }

  const PreintegratedDelta& delta() const { return delta_; }

 private:
  PreintegratedDelta delta_;
  Vec3 gravity_;
};

class RelativePoseFactor final : public Factor {
 public:
  RelativePoseFactor(int i, int j, const Vec3& dp, const Quat& dq, const Mat6& information)
      : dp_(dp), dq_(dq.normalized()) {
    state_ids_ = {i, j};
    sqrt_info_ = symmetric_sqrt(information);
  }

  FactorKind kind() const override { return FactorKind::relative_pose; }
  int dim() const override { return 6; }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    const State& si = *xs[0];
    const State& sj = *xs[1];
    const Mat3 r_wi = si.q.toRotationMatrix().transpose();
    Vec6 r;
    r.head<3>() = r_wi * (sj.p - si.p) - dp_;
    r.tail<3>() = log_so3(Quat(dq_.conjugate() * si.q.conjugate() * sj.q));
    return r;
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    const State& si = *xs[0];
    const State& sj = *xs[1];
    const Mat3 r_wi = si.q.toRotationMatrix().transpose();
    const Quat q_ij = si.q.conjugate() * sj.q;
    const Vec3 phi = log_so3(Quat(dq_.conjugate() * q_ij));
    const Mat3 jr_inv = right_jacobian_inv_so3(phi);

    jacs.assign(2, Eigen::MatrixXd::Zero(6, 15));
    jacs[0].block<3, 3>(0, 0) = -r_wi;
    jacs[0].block<3, 3>(0, 6) = skew(r_wi * (sj.p - si.p));
    jacs[0].block<3, 3>(3, 6) = -jr_inv * q_ij.toRotationMatrix().transpose();
    jacs[1].block<3, 3>(0, 0) = r_wi;
    jacs[1].block<3, 3>(3, 6) = jr_inv;
  }

 private:
  Vec3 dp_;
  Quat dq_;
};

class StatePriorFactor final : public Factor {
 public:
  StatePriorFactor(int i, const State& prior, const Mat15& information) : prior_(prior) {
    state_ids_ = {i};
    sqrt_info_ = symmetric_sqrt(information);
  }

  FactorKind kind() const override { return FactorKind::prior; }
  int dim() const override { return 15; }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    return boxminus(*xs[0], prior_);
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    jacs.assign(1, Eigen::MatrixXd::Identity(15, 15));
    const Vec3 phi = log_so3(Quat(prior_.q.conjugate() * xs[0]->q));
    jacs[0].block<3, 3>(6, 6) = right_jacobian_inv_so3(phi);
  }

 private:
  State prior_;
};

class PosePriorFactor final : public Factor {
 public:
  PosePriorFactor(int i, const Pose& prior, const Mat6& information) : prior_(prior) {
    state_ids_ = {i};
    sqrt_info_ = symmetric_sqrt(information);
  }

  FactorKind kind() const override { return FactorKind::prior; }
  int dim() const override { return 6; }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    Vec6 r;
    r.head<3>() = xs[0]->p - prior_.translation;
    r.tail<3>() = log_so3(Quat(prior_.rotation.conjugate() * xs[0]->q));
    return r;
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    jacs.assign(1, Eigen::MatrixXd::Zero(6, 15));
    jacs[0].block<3, 3>(0, 0) = Mat3::Identity();
    const Vec3 phi = log_so3(Quat(prior_.rotation.conjugate() * xs[0]->q));
    jacs[0].block<3, 3>(3, 6) = right_jacobian_inv_so3(phi);
  }

 private:
  Pose prior_;
};

class ReprojectionFactor final : public Factor {
 public:
  ReprojectionFactor(int a, int b, const ReprojectionMeasurement& m,
                     const Eigen::Matrix2d& information)
      : m_(m) {
    state_ids_ = {a, b};
    sqrt_info_ = symmetric_sqrt(information);
  }

  FactorKind kind() const override { return FactorKind::reprojection; }
  int dim() const override { return 2; }

  bool valid(const std::vector<const State*>& xs) const override {
    return point_in_camera_b(xs).z() > kMinDepth;
  }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    const Vec3 x_cb = point_in_camera_b(xs);
    Eigen::Vector2d r = m_.obs_b - Eigen::Vector2d(x_cb.x() / x_cb.z(), x_cb.y() / x_cb.z());
    return r;
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    const State& sa = *xs[0];
    const State& sb = *xs[1];
    const Mat3 r_a = sa.q.toRotationMatrix();
    const Mat3 r_b = sb.q.toRotationMatrix();
    const Mat3 r_bc = m_.body_to_camera.rotation.toRotationMatrix();

    const Vec3 x_ca(m_.obs_a.x() * m_.depth_a, m_.obs_a.y() * m_.depth_a, m_.depth_a);
    const Vec3 x_ba = r_bc * x_ca + m_.body_to_camera.translation;
    const Vec3 x_w = r_a * x_ba + sa.p;
    const Vec3 x_bb = r_b.transpose() * (x_w - sb.p);
    const Vec3 x_cb = r_bc.transpose() * (x_bb - m_.body_to_camera.translation);

    Eigen::Matrix<double, 2, 3> dproj;
    const double z = x_cb.z();
    dproj << 1.0 / z, 0.0, -x_cb.x() / (z * z), 0.0, 1.0 / z, -x_cb.y() / (z * z);

    const Mat3 m_world = r_bc.transpose() * r_b.transpose();  // d x_cb / d x_w

    jacs.assign(2, Eigen::MatrixXd::Zero(2, 15));
    jacs[0].block<2, 3>(0, 0) = -dproj * m_world;
    jacs[0].block<2, 3>(0, 6) = -dproj * m_world * (-r_a * skew(x_ba));
    jacs[1].block<2, 3>(0, 0) = -dproj * (-m_world);
    jacs[1].block<2, 3>(0, 6) = -dproj * (r_bc.transpose() * skew(x_bb));
  }

 private:
  static constexpr double kMinDepth = 0.05;

  Vec3 point_in_camera_b(const std::vector<const State*>& xs) const {
    const State& sa = *xs[0];
    const State& sb = *xs[1];
    const Vec3 x_ca(m_.obs_a.x() * m_.depth_a, m_.obs_a.y() * m_.depth_a, m_.depth_a);
    const Vec3 x_w = sa.q * (m_.body_to_camera.rotation * x_ca + m_.body_to_camera.translation) +
                     sa.p;
    const Vec3 x_bb = sb.q.conjugate() * (x_w - sb.p);
    return m_.body_to_camera.rotation.conjugate() *
           (x_bb - m_.body_to_camera.translation);
  }

  ReprojectionMeasurement m_;
};

class IcpFactor final : public Factor {
 public:
  IcpFactor(FactorKind kind, int s, const Vec3& source_body, const Vec3& target_point,
            const Vec3& direction, double weight)
      : kind_(kind), p_(source_body), q_(target_point), dir_(direction) {
    state_ids_ = {s};
    const int n = kind == FactorKind::icp_plane ? 1 : 3;
    sqrt_info_ = weight * Eigen::MatrixXd::Identity(n, n);
  }

  FactorKind kind() const override { return kind_; }
  int dim() const override { return kind_ == FactorKind::icp_plane ? 1 : 3; }

  Eigen::VectorXd residual(const std::vector<const State*>& xs) const override {
    const Vec3 diff = q_ - (xs[0]->q * p_ + xs[0]->p);
    switch (kind_) {
      case FactorKind::icp_point:
        return diff;
      case FactorKind::icp_line:
        return dir_.cross(diff);
      default:
        return Eigen::VectorXd::Constant(1, dir_.dot(diff));
    }
  }

  void jacobians(const std::vector<const State*>& xs,
                 std::vector<Eigen::MatrixXd>& jacs) const override {
    const Mat3 r = xs[0]->q.toRotationMatrix();
    Eigen::Matrix<double, 3, 6> base;  // d(q - (Rp+t)) / d[dp, dth]
    base.leftCols<3>() = -Mat3::Identity();
    base.rightCols<3>() = r * skew(p_);

    jacs.assign(1, Eigen::MatrixXd::Zero(dim(), 15));
    switch (kind_) {
      case FactorKind::icp_point:
        jacs[0].block<3, 3>(0, 0) = base.leftCols<3>();
        jacs[0].block<3, 3>(0, 6) = base.rightCols<3>();
        break;
      case FactorKind::icp_line: {
        const Mat3 vx = skew(dir_);
        jacs[0].block<3, 3>(0, 0) = vx * base.leftCols<3>();
        jacs[0].block<3, 3>(0, 6) = vx * base.rightCols<3>();
        break;
      }
      default:
        jacs[0].block<1, 3>(0, 0) = dir_.transpose() * base.leftCols<3>();
        jacs[0].block<1, 3>(0, 6) = dir_.transpose() * base.rightCols<3>();
    }
  }

 private:
  FactorKind kind_;
  Vec3 p_, q_, dir_;
};

}  // namespace

std::unique_ptr<Factor> make_preintegration_factor(int i, int j, PreintegratedDelta delta,
                                                   const Vec3& gravity) {
  return std::make_unique<PreintegrationFactor>(i, j, std::move(delta), gravity);
}

std::unique_ptr<Factor> make_relative_pose_factor(int i, int j, const Vec3& dp, const Quat& dq,
                                                  const Mat6& information) {
  return std::make_unique<RelativePoseFactor>(i, j, dp, dq, information);
}

std::unique_ptr<Factor> make_state_prior_factor(int i, const State& prior,
                                                const Mat15& information) {
  return std::make_unique<StatePriorFactor>(i, prior, information);
}

std::unique_ptr<Factor> make_pose_prior_factor(int i, const Pose& prior,
                                               const Mat6& information) {
  return std::make_unique<PosePriorFactor>(i, prior, information);
}

std::unique_ptr<Factor> make_reprojection_factor(int a, int b, const ReprojectionMeasurement& m,
                                                 const Eigen::Matrix2d& information) {
  return std::make_unique<ReprojectionFactor>(a, b, m, information);
}

std::unique_ptr<Factor> make_icp_point_factor(int s, const Vec3& source_body,
                                              const Vec3& target_world, double weight) {
  return std::make_unique<IcpFactor>(FactorKind::icp_point, s, source_body, target_world,
                                     Vec3::UnitX(), weight);
}

std::unique_ptr<Factor> make_icp_line_factor(int s, const Vec3& source_body,
                                             const Vec3& target_point, const Vec3& direction,
                                             double weight) {
  return std::make_unique<IcpFactor>(FactorKind::icp_line, s, source_body, target_point,
                                     direction.normalized(), weight);
}

std::unique_ptr<Factor> make_icp_plane_factor(int s, const Vec3& source_body,
                                              const Vec3& target_point, const Vec3& normal,
                                              double weight) {
  return std::make_unique<IcpFactor>(FactorKind::icp_plane, s, source_body, target_point,
                                     normal.normalized(), weight);
}

int Window::add_state(const State& s) {
  const int id = next_state_id_++;
  states_.emplace(id, s);
  return id;
}

State& Window::state(int id) { return states_.at(id); }
const State& Window::state(int id) const { return states_.at(id); }

std::vector<int> Window::state_ids() const {
  std::vector<int> ids;
  ids.reserve(states_.size());
  for (const auto& [id, _] : states_) ids.push_back(id);
  return ids;
}

int Window::add_factor(std::unique_ptr<Factor> f) {
  for (int id : f->state_ids()) {
    if (!states_.count(id)) return -1;
  }
  const int id = next_factor_id_++;
  factors_.emplace(id, std::move(f));
  return id;
}

int Window::add_relative_pose_factor(int i, int j, const Vec3& dp, const Quat& dq,
                                     const Mat6& information) {
  if (i >= j) return -1;
  return add_factor(make_relative_pose_factor(i, j, dp, dq, information));
}

void Window::remove_factor(int factor_id) { factors_.erase(factor_id); }

const Factor* Window::factor(int factor_id) const {
  auto it = factors_.find(factor_id);
  return it == factors_.end() ? nullptr : it->second.get();
}

std::vector<int> Window::factor_ids() const {
  std::vector<int> ids;
  ids.reserve(factors_.size());
  for (const auto& [id, _] : factors_) ids.push_back(id);
  return ids;
}

int Window::tangent_offset(int id) const {
  int off = 0;
  for (const auto& [sid, _] : states_) {
    if (sid == id) return off;
    off += 15;
  }
  return -1;
}

double Window::cost_of(const std::map<int, State>& states) const {
  double total = 0.0;
  std::vector<const State*> xs;
  for (const auto& [fid, f] : factors_) {
    xs.clear();
    for (int sid : f->state_ids()) xs.push_back(&states.at(sid));
    if (!f->valid(xs)) continue;
    const Eigen::VectorXd wr = f->sqrt_info() * f->residual(xs);
    total += evaluate_robust_weight(wr.norm(), f->kernel) * wr.squaredNorm();
  }
  if (marginal_) {
    Eigen::VectorXd d(marginal_->b.size());
    for (size_t k = 0; k < marginal_->ids.size(); ++k) {
      d.segment<15>(15 * k) = boxminus(states.at(marginal_->ids[k]), marginal_->lin[k]);
    }
    total += d.dot(marginal_->h * d) + 2.0 * marginal_->b.dot(d) + marginal_->c;
  }
  return total;
}

double Window::cost() const { return cost_of(states_); }

Window::Linearization Window::linearize() const {
  const int n = static_cast<int>(states_.size()) * 15;
  Linearization lin;
  lin.h = Eigen::MatrixXd::Zero(n, n);
  lin.g = Eigen::VectorXd::Zero(n);

  std::vector<const State*> xs;
  std::vector<Eigen::MatrixXd> jacs;
  for (const auto& [fid, f] : factors_) {
    xs.clear();
    for (int sid : f->state_ids()) xs.push_back(&states_.at(sid));
    if (!f->valid(xs)) continue;
    Eigen::VectorXd wr = f->sqrt_info() * f->residual(xs);
    const double w = evaluate_robust_weight(wr.norm(), f->kernel);
    lin.cost += w * wr.squaredNorm();
    const double sw = std::sqrt(w);
    wr *= sw;
    f->jacobians(xs, jacs);
    const size_t m = f->state_ids().size();
    std::vector<int> offs(m);
    std::vector<Eigen::MatrixXd> wj(m);
    for (size_t a = 0; a < m; ++a) {
      offs[a] = tangent_offset(f->state_ids()[a]);
      wj[a] = sw * (f->sqrt_info() * jacs[a]);
    }
    for (size_t a = 0; a < m; ++a) {
      lin.g.segment<15>(offs[a]) += wj[a].transpose() * wr;
      for (size_t b = 0; b < m; ++b) {
        lin.h.block<15, 15>(offs[a], offs[b]) += wj[a].transpose() * wj[b];
      }
    }
  }

  if (marginal_) {
    Eigen::VectorXd d(marginal_->b.size());
    std::vector<int> offs(marginal_->ids.size());
    for (size_t k = 0; k < marginal_->ids.size(); ++k) {
      d.segment<15>(15 * k) = boxminus(states_.at(marginal_->ids[k]), marginal_->lin[k]);
      offs[k] = tangent_offset(marginal_->ids[k]);
    }
    lin.cost += d.dot(marginal_->h * d) + 2.0 * marginal_->b.dot(d) + marginal_->c;
    const Eigen::VectorXd gm = marginal_->h * d + marginal_->b;
    for (size_t a = 0; a < marginal_->ids.size(); ++a) {
      lin.g.segment<15>(offs[a]) += gm.segment<15>(15 * a);
      for (size_t b = 0; b < marginal_->ids.size(); ++b) {
        lin.h.block<15, 15>(offs[a], offs[b]) += marginal_->h.block<15, 15>(15 * a, 15 * b);
      }
    }
  }
  return lin;
}

SolveReport Window::optimize(const SolveConfig& config) {
  SolveReport report;
  if (states_.empty()) return report;

  Linearization lin = linearize();
  report.initial_cost = lin.cost;
  report.final_cost = lin.cost;

  // Gauge check: a window constrained only by relative factors has a singular
  // normal matrix; refuse to iterate rather than drift on damping.
  {
    bool has_prior = marginal_.has_value();
    for (const auto& [fid, f] : factors_) {
      const FactorKind k = f->kind();
      if (k == FactorKind::prior || k == FactorKind::icp_point || k == FactorKind::icp_line ||
          k == FactorKind::icp_plane || k == FactorKind::reprojection) {
        has_prior = true;  // unary or world-referenced factors pin the gauge
        break;
      }
    }
    if (!has_prior) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lin.h);
      const double max_ev = es.eigenvalues().maxCoeff();
      if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, max_ev)) {
        report.gauge_unfixed = true;
        return report;
      }
    }
  }

  double lambda = config.lambda_init;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    report.iterations = iter + 1;
    Eigen::MatrixXd damped = lin.h;
    // Absolute ridge keeps fully unobserved dimensions (zero rows) solvable;
    // their gradient is zero so the step stays zero there.
    damped.diagonal().array() += lambda * lin.h.diagonal().array().max(1e-9) + 1e-10;
    const Eigen::VectorXd step = damped.ldlt().solve(-lin.g);

    if (step.norm() < config.term_step_norm) {
      report.converged = true;
      break;
    }

    std::map<int, State> candidate = states_;
    int off = 0;
    for (auto& [sid, s] : candidate) {
      s = boxplus(s, step.segment<15>(off));
      off += 15;
    }
    const double new_cost = cost_of(candidate);
    if (new_cost <= report.final_cost) {
      const double rel = (report.final_cost - new_cost) / std::max(report.final_cost, 1e-300);
      states_ = std::move(candidate);
      report.final_cost = new_cost;
      lambda *= config.lambda_accept;
      lin = linearize();
      if (rel < config.term_rel_cost) {
        report.converged = true;
        break;
      }
    } else {
      lambda *= config.lambda_reject;
    }
  }
  const Eigen::MatrixXd h_final = linearize().h;
  report.degenerate_directions = degenerate_directions_of(h_final, config.degeneracy_rel_eig);
  return report;
}

std::vector<Eigen::VectorXd> degenerate_directions_of(const Eigen::MatrixXd& h,
                                                      double rel_threshold) {
  std::vector<Eigen::VectorXd> dirs;
  if (h.rows() == 0) return dirs;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  Eigen::VectorXd ev = es.eigenvalues();
  std::vector<double> sorted(ev.data(), ev.data() + ev.size());
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < rel_threshold * median) dirs.push_back(es.eigenvectors().col(i));
  }
  return dirs;
}

Eigen::MatrixXd Window::hessian(const std::vector<FactorKind>& kinds) const {
  const int n = static_cast<int>(states_.size()) * 15;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  std::vector<const State*> xs;
  std::vector<Eigen::MatrixXd> jacs;
  for (const auto& [fid, f] : factors_) {
    if (std::find(kinds.begin(), kinds.end(), f->kind()) == kinds.end()) continue;
    xs.clear();
    for (int sid : f->state_ids()) xs.push_back(&states_.at(sid));
    if (!f->valid(xs)) continue;
    const Eigen::VectorXd wr = f->sqrt_info() * f->residual(xs);
    const double sw = std::sqrt(evaluate_robust_weight(wr.norm(), f->kernel));
    f->jacobians(xs, jacs);
    const size_t m = f->state_ids().size();
    std::vector<int> offs(m);
    std::vector<Eigen::MatrixXd> wj(m);
    for (size_t a = 0; a < m; ++a) {
      offs[a] = tangent_offset(f->state_ids()[a]);
      wj[a] = sw * (f->sqrt_info() * jacs[a]);
    }
    for (size_t a = 0; a < m; ++a) {
      for (size_t b = 0; b < m; ++b) {
        h.block<15, 15>(offs[a], offs[b]) += wj[a].transpose() * wj[b];
      }
    }
  }
  return h;
}

bool Window::marginalize(const std::vector<int>& ids) {
  if (ids.empty()) return true;
  // Only the oldest states may be removed.
  std::vector<int> sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  auto it = states_.begin();
  for (int id : sorted_ids) {
    if (it == states_.end() || it->first != id) return false;
    ++it;
  }

  // Variables involved: removed states plus any retained state touched by a
  // factor on a removed state or covered by the existing prior.
  auto is_removed = [&](int id) {
    return std::binary_search(sorted_ids.begin(), sorted_ids.end(), id);
  };
  std::vector<int> involved = sorted_ids;
  std::vector<int> dropped_factors;
  for (const auto& [fid, f] : factors_) {
    bool touches = false;
    for (int sid : f->state_ids()) touches |= is_removed(sid);
    if (!touches) continue;
    dropped_factors.push_back(fid);
    for (int sid : f->state_ids()) involved.push_back(sid);
  }
  if (marginal_) {
    for (int sid : marginal_->ids) involved.push_back(sid);
  }
  std::sort(involved.begin(), involved.end());
  involved.erase(std::unique(involved.begin(), involved.end()), involved.end());

  const int n = static_cast<int>(involved.size()) * 15;
  auto local_offset = [&](int id) {
    return 15 * static_cast<int>(std::lower_bound(involved.begin(), involved.end(), id) -
                                 involved.begin());
  };

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  double c = 0.0;

  std::vector<const State*> xs;
  std::vector<Eigen::MatrixXd> jacs;
  for (int fid : dropped_factors) {
    const auto& f = factors_.at(fid);
    xs.clear();
    for (int sid : f->state_ids()) xs.push_back(&states_.at(sid));
    if (!f->valid(xs)) continue;
    Eigen::VectorXd wr = f->sqrt_info() * f->residual(xs);
    const double sw = std::sqrt(evaluate_robust_weight(wr.norm(), f->kernel));
    wr *= sw;
    c += wr.squaredNorm();
    f->jacobians(xs, jacs);
    const size_t m = f->state_ids().size();
    for (size_t a = 0; a < m; ++a) {
      const Eigen::MatrixXd wja = sw * (f->sqrt_info() * jacs[a]);
      const int oa = local_offset(f->state_ids()[a]);
      b.segment<15>(oa) += wja.transpose() * wr;
      for (size_t bb = 0; bb < m; ++bb) {
        const Eigen::MatrixXd wjb = sw * (f->sqrt_info() * jacs[bb]);
        h.block<15, 15>(oa, local_offset(f->state_ids()[bb])) += wja.transpose() * wjb;
      }
    }
  }

  if (marginal_) {
    Eigen::VectorXd d(marginal_->b.size());
    for (size_t k = 0; k < marginal_->ids.size(); ++k) {
      d.segment<15>(15 * k) = boxminus(states_.at(marginal_->ids[k]), marginal_->lin[k]);
    }
    c += d.dot(marginal_->h * d) + 2.0 * marginal_->b.dot(d) + marginal_->c;
    const Eigen::VectorXd gm = marginal_->h * d + marginal_->b;
    for (size_t a = 0; a < marginal_->ids.size(); ++a) {
      const int oa = local_offset(marginal_->ids[a]);
      b.segment<15>(oa) += gm.segment<15>(15 * a);
      for (size_t bb = 0; bb < marginal_->ids.size(); ++bb) {
        h.block<15, 15>(oa, local_offset(marginal_->ids[bb])) +=
            marginal_->h.block<15, 15>(15 * a, 15 * bb);
      }
    }
  }

  // Partition into removed (m) and retained (r) blocks; Schur complement.
  const int nm = static_cast<int>(sorted_ids.size()) * 15;
  const int nr = n - nm;
  std::vector<int> retained;
  for (int id : involved) {
    if (!is_removed(id)) retained.push_back(id);
  }

  Eigen::VectorXi perm(n / 15);
  {
    int k = 0;
    for (int id : sorted_ids) perm[k++] = local_offset(id) / 15;
    for (int id : retained) perm[k++] = local_offset(id) / 15;
  }
  Eigen::MatrixXd hp(n, n);
  Eigen::VectorXd bp(n);
  for (int a = 0; a < n / 15; ++a) {
    bp.segment<15>(15 * a) = b.segment<15>(15 * perm[a]);
    for (int bb = 0; bb < n / 15; ++bb) {
      hp.block<15, 15>(15 * a, 15 * bb) = h.block<15, 15>(15 * perm[a], 15 * perm[bb]);
    }
  }

  MarginalPrior next;
  next.ids = retained;
  for (int id : retained) next.lin.push_back(states_.at(id));
  if (nr > 0) {
    const Eigen::MatrixXd hmm_inv = pseudo_inverse(hp.topLeftCorner(nm, nm));
    const Eigen::MatrixXd hrm = hp.bottomLeftCorner(nr, nm);
    next.h = hp.bottomRightCorner(nr, nr) - hrm * hmm_inv * hrm.transpose();
    next.h = 0.5 * (next.h + next.h.transpose()).eval();
    next.b = bp.tail(nr) - hrm * hmm_inv * bp.head(nm);
    next.c = c - bp.head(nm).dot(hmm_inv * bp.head(nm));
    marginal_ = std::move(next);
  } else {
    marginal_.reset();
  }

  for (int fid : dropped_factors) factors_.erase(fid);
  for (int id : sorted_ids) states_.erase(id);
  return true;
}

}  // namespace odomkit
