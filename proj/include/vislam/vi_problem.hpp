#pragma once

// Sparse Gauss-Newton over navigation states and landmarks with
// reprojection, inertial and prior terms. Landmarks are eliminated by a
// Schur complement each iteration; the reduced state system is factored with
// a sparse LDLT.

#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/factors.hpp"
#include "vislam/nav_state.hpp"
#include "vislam/preintegration.hpp"

namespace vislam {

/// Per-component fixation of a 15-dim state; true means held constant.
using StateMask = Eigen::Matrix<bool, 15, 1>;

inline StateMask all_free() { return StateMask::Constant(false); }
inline StateMask all_fixed() { return StateMask::Constant(true); }
inline StateMask pose_fixed() {
  StateMask m = all_free();
  m.segment<3>(state_index::kRot).setConstant(true);
  m.segment<3>(state_index::kPos).setConstant(true);
  return m;
}

struct SolverOptions {
  int max_iterations = 10;
  double relative_cost_tolerance = 1e-12;
  double step_tolerance = 1e-10;
  int max_step_halvings = 6;
  int max_failed_iterations = 3;  // consecutive, before reporting divergence
};

struct SolverReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool diverged = false;
  int dropped_observations = 0;  // behind-camera at the final evaluation
};

class ViProblem {
 public:
  ViProblem(const PinholeCamera& camera, const RigidPosed& T_CB, const Eigen::Vector3d& gravity,
            const ImuNoiseModel& noise);

  int add_state(const NavState& state, const StateMask& fixed = all_free());
  int add_landmark(const Eigen::Vector3d& X_W, bool fixed = false);

  void add_reprojection(int state, int landmark, const Observation& obs);
  /// `with_bias_term` adds the random-walk residual between the two biases.
  void add_imu(int state_i, int state_j, const PreintegratedImu& pre, bool with_bias_term = true);
  void add_prior(int state, const MarginalPrior& prior);

  SolverReport solve(const SolverOptions& options = {});

  double cost() const;
  int usable_observations() const;

  const NavState& state(int k) const { return states_[k].value; }
  const Eigen::Vector3d& landmark(int k) const { return landmarks_[k].value; }
  std::size_t num_states() const { return states_.size(); }

  /// Information of the states (landmarks marginalized) at the current
  /// estimate, 15 rows per state in insertion order. Fixed components and
  /// fully fixed states contribute zero rows and columns.
  Eigen::MatrixXd state_information();

 private:
  struct StateVar {
    NavState value;
    StateMask fixed;
    int block = -1;  // index among states with a free component
  };
  struct LandmarkVar {
    Eigen::Vector3d value;
    bool fixed = false;
    int block = -1;
  };
  struct ReprojFactor {
    int state;
    int landmark;
    Observation obs;
  };
  struct ImuFactor {
    int i;
    int j;
    PreintegratedImu pre;
    bool with_bias;
  };
  struct PriorFactor {
    int state;
    MarginalPrior prior;
  };
  struct Linearization;

  Linearization linearize() const;
  void apply_step(const Eigen::VectorXd& dx, const std::vector<Eigen::Vector3d>& dl, double alpha);
  void assign_blocks();

  PinholeCamera camera_;
  RigidPosed T_CB_;
  Eigen::Vector3d gravity_;
  ImuNoiseModel noise_;
  std::vector<StateVar> states_;
  std::vector<LandmarkVar> landmarks_;
  std::vector<ReprojFactor> reproj_;
  std::vector<ImuFactor> imu_;
  std::vector<PriorFactor> priors_;
  int free_states_ = 0;
  int free_landmarks_ = 0;
};

}  // namespace vislam
