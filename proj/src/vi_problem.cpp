#include "vislam/vi_problem.hpp"

#include <cmath>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "vislam/errors.hpp"

namespace vislam {

namespace {

using Matrix15x3d = Eigen::Matrix<double, 15, 3>;

template <int R>
void mask_columns(Eigen::Matrix<double, R, 15>& j, const StateMask& fixed) {
  for (int k = 0; k < 15; ++k) {
    if (fixed(k)) j.col(k).setZero();
  }
}

}  // namespace

struct ViProblem::Linearization {
  // Upper-triangular state blocks: blocks[a][b] with b >= a.
  std::vector<std::unordered_map<int, Matrix15d>> blocks;
  Eigen::VectorXd g_state;
  std::vector<Eigen::Matrix3d> H_ll;
  std::vector<Eigen::Vector3d> g_l;
  std::vector<std::vector<std::pair<int, Matrix15x3d>>> H_sl;
  double cost = 0.0;
  int dropped = 0;

  void add_block(int a, int b, const Matrix15d& m) {
    if (a <= b) {
      auto [it, inserted] = blocks[a].try_emplace(b, m);
      if (!inserted) it->second += m;
    } else {
      auto [it, inserted] = blocks[b].try_emplace(a, m.transpose());
      if (!inserted) it->second += m.transpose();
    }
  }
};

ViProblem::ViProblem(const PinholeCamera& camera, const RigidPosed& T_CB,
                     const Eigen::Vector3d& gravity, const ImuNoiseModel& noise)
    : camera_(camera), T_CB_(T_CB), gravity_(gravity), noise_(noise) {}

int ViProblem::add_state(const NavState& state, const StateMask& fixed) {
  states_.push_back({state, fixed, -1});
  return static_cast<int>(states_.size()) - 1;
}

int ViProblem::add_landmark(const Eigen::Vector3d& X_W, bool fixed) {
  landmarks_.push_back({X_W, fixed, -1});
  return static_cast<int>(landmarks_.size()) - 1;
}

void ViProblem::add_reprojection(int state, int landmark, const Observation& obs) {
  reproj_.push_back({state, landmark, obs});
}

void ViProblem::add_imu(int state_i, int state_j, const PreintegratedImu& pre,
                        bool with_bias_term) {
  imu_.push_back({state_i, state_j, pre, with_bias_term});
}

void ViProblem::add_prior(int state, const MarginalPrior& prior) {
  priors_.push_back({state, prior});
}

void ViProblem::assign_blocks() {
  free_states_ = 0;
  for (StateVar& s : states_) s.block = s.fixed.all() ? -1 : free_states_++;
  free_landmarks_ = 0;
  for (LandmarkVar& l : landmarks_) l.block = l.fixed ? -1 : free_landmarks_++;
}

double ViProblem::cost() const {
  double total = 0.0;
  for (const ReprojFactor& f : reproj_) {
    const auto t = reprojection_residual(states_[f.state].value, landmarks_[f.landmark].value,
                                         f.obs, camera_, T_CB_);
    if (t) total += huber_cost(t->chi2, kHuberReprojection);
  }
  for (const ImuFactor& f : imu_) {
    const ImuTerm t =
        imu_residual(states_[f.i].value, states_[f.j].value, f.pre, gravity_, noise_);
    total += huber_cost(t.residual.dot(t.information * t.residual), kHuberImu);
    if (f.with_bias) {
      total += huber_cost(t.bias_residual.dot(t.bias_information * t.bias_residual), kHuberBias);
    }
  }
  for (const PriorFactor& f : priors_) {
    total += huber_cost(prior_residual(states_[f.state].value, f.prior).chi2, kHuberPrior);
  }
  return total;
}

int ViProblem::usable_observations() const {
  int n = 0;
  for (const ReprojFactor& f : reproj_) {
    if (reprojection_residual(states_[f.state].value, landmarks_[f.landmark].value, f.obs,
                              camera_, T_CB_)) {
      ++n;
    }
  }
  return n;
}

ViProblem::Linearization ViProblem::linearize() const {
  Linearization lin;
  lin.blocks.resize(free_states_);
  lin.g_state = Eigen::VectorXd::Zero(15 * free_states_);
  lin.H_ll.assign(free_landmarks_, Eigen::Matrix3d::Zero());
  lin.g_l.assign(free_landmarks_, Eigen::Vector3d::Zero());
  lin.H_sl.resize(free_landmarks_);

  for (const ReprojFactor& f : reproj_) {
    const StateVar& s = states_[f.state];
    const LandmarkVar& l = landmarks_[f.landmark];
    auto t = reprojection_residual(s.value, l.value, f.obs, camera_, T_CB_);
    if (!t) {
      ++lin.dropped;
      continue;
    }
    lin.cost += huber_cost(t->chi2, kHuberReprojection);
    const Eigen::Matrix2d W = t->weight * f.obs.info;
    mask_columns<2>(t->J_state, s.fixed);
    if (s.block >= 0) {
      lin.add_block(s.block, s.block, t->J_state.transpose() * W * t->J_state);
      lin.g_state.segment<15>(15 * s.block) += t->J_state.transpose() * W * t->residual;
    }
    if (l.block >= 0) {
      lin.H_ll[l.block] += t->J_landmark.transpose() * W * t->J_landmark;
      lin.g_l[l.block] += t->J_landmark.transpose() * W * t->residual;
      if (s.block >= 0) {
        auto& row = lin.H_sl[l.block];
        const Matrix15x3d m = t->J_state.transpose() * W * t->J_landmark;
        if (!row.empty() && row.back().first == s.block) {
          row.back().second += m;
        } else {
          row.emplace_back(s.block, m);
        }
      }
    }
  }

  for (const ImuFactor& f : imu_) {
    const StateVar& si = states_[f.i];
    const StateVar& sj = states_[f.j];
    ImuTerm t = imu_residual(si.value, sj.value, f.pre, gravity_, noise_);
    mask_columns<9>(t.J_i, si.fixed);
    mask_columns<9>(t.J_j, sj.fixed);
    mask_columns<6>(t.J_bias_i, si.fixed);
    mask_columns<6>(t.J_bias_j, sj.fixed);

    auto accumulate = [&](const auto& Ji, const auto& Jj, const auto& info, const auto& r,
                          double delta) {
      const double chi2 = r.dot(info * r);
      lin.cost += huber_cost(chi2, delta);
      const auto W = (huber_weight(chi2, delta) * info).eval();
      if (si.block >= 0) {
        lin.add_block(si.block, si.block, Ji.transpose() * W * Ji);
        lin.g_state.template segment<15>(15 * si.block) += Ji.transpose() * W * r;
      }
      if (sj.block >= 0) {
        lin.add_block(sj.block, sj.block, Jj.transpose() * W * Jj);
        lin.g_state.template segment<15>(15 * sj.block) += Jj.transpose() * W * r;
      }
      if (si.block >= 0 && sj.block >= 0) {
        lin.add_block(si.block, sj.block, Ji.transpose() * W * Jj);
      }
    };
    accumulate(t.J_i, t.J_j, t.information, t.residual, kHuberImu);
    if (f.with_bias) {
      accumulate(t.J_bias_i, t.J_bias_j, t.bias_information, t.bias_residual, kHuberBias);
    }
  }

  for (const PriorFactor& f : priors_) {
    const StateVar& s = states_[f.state];
    PriorTerm t = prior_residual(s.value, f.prior);
    lin.cost += huber_cost(t.chi2, kHuberPrior);
    if (s.block < 0) continue;
    mask_columns<15>(t.J, s.fixed);
    const Matrix15d W = huber_weight(t.chi2, kHuberPrior) * f.prior.information;
    lin.add_block(s.block, s.block, t.J.transpose() * W * t.J);
    lin.g_state.segment<15>(15 * s.block) += t.J.transpose() * W * t.residual;
  }
  return lin;
}

namespace {

Eigen::Matrix3d landmark_inverse(const Eigen::Matrix3d& h) {
  const double reg = 1e-12 * std::max(h.trace(), 1e-12);
  return (h + reg * Eigen::Matrix3d::Identity()).inverse();
}

// Eliminates landmarks in place: blocks and g_state become the reduced system.
void schur_eliminate(std::vector<std::unordered_map<int, Matrix15d>>& blocks,
                     Eigen::VectorXd& g_state, const std::vector<Eigen::Matrix3d>& H_ll,
                     const std::vector<Eigen::Vector3d>& g_l,
                     const std::vector<std::vector<std::pair<int, Matrix15x3d>>>& H_sl,
                     std::vector<Eigen::Matrix3d>& H_ll_inv) {
  H_ll_inv.resize(H_ll.size());
  for (std::size_t c = 0; c < H_ll.size(); ++c) {
    H_ll_inv[c] = landmark_inverse(H_ll[c]);
    const auto& row = H_sl[c];
    for (std::size_t x = 0; x < row.size(); ++x) {
      const Matrix15x3d left = row[x].second * H_ll_inv[c];
      g_state.segment<15>(15 * row[x].first) -= left * g_l[c];
      for (std::size_t y = 0; y < row.size(); ++y) {
        int a = row[x].first;
        int b = row[y].first;
        if (a > b) continue;
        const Matrix15d m = left * row[y].second.transpose();
        auto [it, inserted] = blocks[a].try_emplace(b, -m);
        if (!inserted) it->second -= m;
      }
    }
  }
}

}  // namespace

Eigen::MatrixXd ViProblem::state_information() {
  assign_blocks();
  Linearization lin = linearize();
  std::vector<Eigen::Matrix3d> H_ll_inv;
  schur_eliminate(lin.blocks, lin.g_state, lin.H_ll, lin.g_l, lin.H_sl, H_ll_inv);

  std::vector<int> offset(free_states_, 0);
  for (std::size_t k = 0; k < states_.size(); ++k) {
    if (states_[k].block >= 0) offset[states_[k].block] = 15 * static_cast<int>(k);
  }
  const auto n = static_cast<Eigen::Index>(15 * states_.size());
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < free_states_; ++a) {
    for (const auto& [b, m] : lin.blocks[a]) {
      info.block<15, 15>(offset[a], offset[b]) = m;
      if (a != b) info.block<15, 15>(offset[b], offset[a]) = m.transpose();
    }
  }
  return info;
}

void ViProblem::apply_step(const Eigen::VectorXd& dx, const std::vector<Eigen::Vector3d>& dl,
                           double alpha) {
  for (StateVar& s : states_) {
    if (s.block < 0) continue;
    s.value = retract(s.value, alpha * dx.segment<15>(15 * s.block));
  }
  for (LandmarkVar& l : landmarks_) {
    if (l.block >= 0) l.value += alpha * dl[l.block];
  }
}

SolverReport ViProblem::solve(const SolverOptions& options) {
  assign_blocks();
  SolverReport report;
  report.initial_cost = cost();
  report.final_cost = report.initial_cost;
  if (free_states_ == 0 && free_landmarks_ == 0) {
    report.converged = true;
    return report;
  }

  int failed = 0;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Linearization lin = linearize();
    const double current = lin.cost;
    std::vector<Eigen::Matrix3d> H_ll_inv;
    schur_eliminate(lin.blocks, lin.g_state, lin.H_ll, lin.g_l, lin.H_sl, H_ll_inv);

    const Eigen::Index n = 15 * free_states_;
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(n);
    if (n > 0) {
      std::vector<Eigen::Triplet<double>> triplets;
      double max_diag = 0.0;
      for (int a = 0; a < free_states_; ++a) {
        for (const auto& [b, m] : lin.blocks[a]) {
          for (int r = 0; r < 15; ++r) {
            for (int c = 0; c < 15; ++c) {
              if (a == b && c < r) continue;
              if (m(r, c) != 0.0) triplets.emplace_back(15 * a + r, 15 * b + c, m(r, c));
            }
          }
          if (a == b) max_diag = std::max(max_diag, m.diagonal().maxCoeff());
        }
      }
      // Components with no information (fixed or unconstrained) get a unit
      // pivot and a zero gradient so their step is exactly zero.
      Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
      for (int a = 0; a < free_states_; ++a) {
        auto it = lin.blocks[a].find(a);
        if (it != lin.blocks[a].end()) diag.segment<15>(15 * a) = it->second.diagonal();
      }
      for (Eigen::Index k = 0; k < n; ++k) {
        if (diag(k) <= 0.0) {
          triplets.emplace_back(k, k, 1.0);
          lin.g_state(k) = 0.0;
        }
      }
      Eigen::SparseMatrix<double> S(n, n);
      S.setFromTriplets(triplets.begin(), triplets.end());

      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper> ldlt;
      double damping = 0.0;
      for (int attempt = 0; attempt < 6; ++attempt) {
        Eigen::SparseMatrix<double> A = S;
        if (damping > 0.0) {
          for (Eigen::Index k = 0; k < n; ++k) A.coeffRef(k, k) += damping;
        }
        ldlt.compute(A);
        if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
          dx = ldlt.solve(-lin.g_state);
          if (dx.allFinite()) break;
        }
        damping = damping == 0.0 ? 1e-9 * std::max(max_diag, 1.0) : damping * 100.0;
        dx.setZero();
      }
    }

    std::vector<Eigen::Vector3d> dl(free_landmarks_);
    for (int c = 0; c < free_landmarks_; ++c) {
      Eigen::Vector3d rhs = -lin.g_l[c];
      for (const auto& [a, m] : lin.H_sl[c]) rhs -= m.transpose() * dx.segment<15>(15 * a);
      dl[c] = H_ll_inv[c] * rhs;
    }

    const std::vector<StateVar> saved_states = states_;
    const std::vector<LandmarkVar> saved_landmarks = landmarks_;
    double alpha = 1.0;
    double trial = current;
    bool accepted = false;
    for (int h = 0; h <= options.max_step_halvings; ++h) {
      apply_step(dx, dl, alpha);
      trial = cost();
      if (std::isfinite(trial) && trial <= current) {
        accepted = true;
        break;
      }
      states_ = saved_states;
      landmarks_ = saved_landmarks;
      alpha *= 0.5;
    }
    report.iterations = iter + 1;

    double step_norm = dx.squaredNorm();
    for (const auto& d : dl) step_norm += d.squaredNorm();
    step_norm = std::sqrt(step_norm) * alpha;

    if (!accepted) {
      // No decrease beyond round-off: already at the minimum.
      if (trial - current <= 1e-9 * current + 1e-12) {
        report.converged = true;
        break;
      }
      if (++failed >= options.max_failed_iterations) {
        report.diverged = true;
        break;
      }
      continue;
    }
    failed = 0;
    report.final_cost = trial;
    if (current - trial <= options.relative_cost_tolerance * current ||
        step_norm < options.step_tolerance) {
      report.converged = true;
      break;
    }
  }
  report.final_cost = cost();
  for (const ReprojFactor& f : reproj_) {
    if (!reprojection_residual(states_[f.state].value, landmarks_[f.landmark].value, f.obs,
                               camera_, T_CB_)) {
      ++report.dropped_observations;
    }
  }
  if (report.final_cost <= 0.0 && report.initial_cost <= 0.0) report.converged = true;
  return report;
}

}  // namespace vislam
