// Sliding-window nonlinear least squares on manifold states, shared by the
// IMU odometry, LiDAR-inertial, and visual-inertial engines.
//
// Dense Levenberg-Marquardt over windows of at most a few tens of states.
// Cost convention: sum over factors of ||sqrt_info * r||^2 (robust-weighted),
// plus the marginalization prior's quadratic form d'Hd + 2b'd + c.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "odomkit/geometry.hpp"
#include "odomkit/preintegration.hpp"

namespace odomkit {

enum class FactorKind {
  preintegration,
  relative_pose,
  prior,
  reprojection,
  icp_point,
  icp_line,
  icp_plane,
};

struct RobustKernel {
  enum class Type { none, huber };
  Type type = Type::none;
  double delta = 1.0;
};

// 1 for norm <= delta, delta/norm above; none => 1.
double evaluate_robust_weight(double residual_norm, const RobustKernel& kernel);

class Factor {
 public:
  virtual ~Factor() = default;
  virtual FactorKind kind() const = 0;
  virtual int dim() const = 0;
  // Residual given the connected states, in state_ids() order.
  virtual Eigen::VectorXd residual(const std::vector<const State*>& xs) const = 0;
  // Jacobians w.r.t. each connected state's 15-dim tangent [dp,dv,dth,dba,dbg].
  virtual void jacobians(const std::vector<const State*>& xs,
                         std::vector<Eigen::MatrixXd>& jacs) const = 0;
  // False when the factor cannot currently produce a residual (e.g. a
  // reprojected point behind the camera); such factors are skipped.
  virtual bool valid(const std::vector<const State*>& /*xs*/) const { return true; }

  const std::vector<int>& state_ids() const { return state_ids_; }
  const Eigen::MatrixXd& sqrt_info() const { return sqrt_info_; }
  RobustKernel kernel;

 protected:
  std::vector<int> state_ids_;
  Eigen::MatrixXd sqrt_info_;
};

// Symmetric PSD square root, tolerant of semidefinite information matrices.
Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& info);

std::unique_ptr<Factor> make_preintegration_factor(int i, int j, PreintegratedDelta delta,
                                                   const Vec3& gravity);
std::unique_ptr<Factor> make_relative_pose_factor(int i, int j, const Vec3& dp, const Quat& dq,
                                                  const Mat6& information);
std::unique_ptr<Factor> make_state_prior_factor(int i, const State& prior,
                                                const Mat15& information);
std::unique_ptr<Factor> make_pose_prior_factor(int i, const Pose& prior, const Mat6& information);

struct ReprojectionMeasurement {
  Eigen::Vector2d obs_a;  // normalized image coordinates in frame a
  Eigen::Vector2d obs_b;
  double depth_a = 1.0;   // z-depth of the feature in camera a, meters
  Pose body_to_camera;    // extrinsic, shared by both frames
};

std::unique_ptr<Factor> make_reprojection_factor(int a, int b, const ReprojectionMeasurement& m,
                                                 const Eigen::Matrix2d& information);

// Unary scan-matching factors on one pose state; `weight` is the
// correspondence quality from the feature pipeline, folded into sqrt_info.
std::unique_ptr<Factor> make_icp_point_factor(int s, const Vec3& source_body,
                                              const Vec3& target_world, double weight);
std::unique_ptr<Factor> make_icp_line_factor(int s, const Vec3& source_body,
                                             const Vec3& target_point, const Vec3& direction,
                                             double weight);
std::unique_ptr<Factor> make_icp_plane_factor(int s, const Vec3& source_body,
                                              const Vec3& target_point, const Vec3& normal,
                                              double weight);

struct MarginalPrior {
  std::vector<int> ids;         // retained states covered, ascending
  std::vector<State> lin;       // linearization points, same order
  Eigen::MatrixXd h;            // cost = d^T h d + 2 b^T d + c, d = x [-] lin
  Eigen::VectorXd b;
  double c = 0.0;
};

struct SolveConfig {
  int max_iters = 10;
  double lambda_init = 1e-4;
  double lambda_accept = 0.3;
  double lambda_reject = 10.0;
  double term_rel_cost = 1e-6;
  double term_step_norm = 1e-8;
  double degeneracy_rel_eig = 1e-2;  // eigenvalue < rel * median flags a direction
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool gauge_unfixed = false;
  // Unit eigenvectors of the undamped Gauss-Newton Hessian whose eigenvalue
  // falls below degeneracy_rel_eig * median eigenvalue, in window tangent
  // coordinates (15 per live state, id-ascending order).
  std::vector<Eigen::VectorXd> degenerate_directions;
};

class Window {
 public:
  int add_state(const State& s);
  State& state(int id);
  const State& state(int id) const;
  bool has_state(int id) const { return states_.count(id) > 0; }
  std::vector<int> state_ids() const;
  size_t size() const { return states_.size(); }

  // Returns the factor id, or -1 when a referenced state is unknown.
  int add_factor(std::unique_ptr<Factor> f);
  int add_relative_pose_factor(int i, int j, const Vec3& dp, const Quat& dq,
                               const Mat6& information);
  void remove_factor(int factor_id);
  const Factor* factor(int factor_id) const;
  std::vector<int> factor_ids() const;
  size_t factor_count() const { return factors_.size(); }

  const std::optional<MarginalPrior>& marginal_prior() const { return marginal_; }
  void set_marginal_prior(MarginalPrior prior) { marginal_ = std::move(prior); }

  double cost() const;
  SolveReport optimize(const SolveConfig& config);

  // Schur-complement marginalization of `ids` (must be the oldest live
  // states). Factors touching them are linearized at the current estimate and
  // folded, with the previous prior, into a new dense prior.
  // Returns false (window untouched) if ids are not removable.
  bool marginalize(const std::vector<int>& ids);

  // Gauss-Newton Hessian restricted to the given factor kinds (undamped, no
  // marginal prior); rows/cols ordered by ascending state id, 15 per state.
  Eigen::MatrixXd hessian(const std::vector<FactorKind>& kinds) const;
  // Tangent offset of a state id in hessian()/report coordinates.
  int tangent_offset(int id) const;

 private:
  struct Linearization {
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    double cost = 0.0;
  };
  Linearization linearize() const;
  double cost_of(const std::map<int, State>& states) const;

  std::map<int, State> states_;
  std::map<int, std::unique_ptr<Factor>> factors_;
  std::optional<MarginalPrior> marginal_;
  int next_state_id_ = 0;
  int next_factor_id_ = 0;
};

// Eigen-directions of a symmetric block with eigenvalue below
// rel_threshold * median eigenvalue.
std::vector<Eigen::VectorXd> degenerate_directions_of(const Eigen::MatrixXd& h,
                                                      double rel_threshold);

}  // namespace odomkit
