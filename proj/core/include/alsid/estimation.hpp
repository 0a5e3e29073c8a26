#pragma once

#include <functional>
#include <vector>

#include "alsid/lbfgs.hpp"
#include "alsid/models.hpp"
#include "alsid/rng.hpp"
#include "alsid/signals.hpp"
#include "alsid/types.hpp"

namespace alsid {

/// EKF hyperparameters. Parameter-only filters leave P0_x / Q_x empty.
struct EkfHyper {
  Mat P0_theta;
  Mat Q_theta;
  Mat R;
  Mat P0_x;
  Mat Q_x;

  static EkfHyper isotropic_narx(int n_theta, int n_y, double p0, double q_theta, double r);
  static EkfHyper isotropic_joint(int n_x, int n_theta, int n_y, double p0_x,
                                  double p0_theta, double q_x, double q_theta, double r);
};

/// Filter state. NARX mode: theta and P over the parameters only.
/// Joint mode: x_est holds the current hidden-state estimate and P covers
/// [x', theta_x', theta_y']'.
struct EkfState {
  Vec theta;
  Mat P;
  Vec x_est;

  bool joint() const { return x_est.size() > 0; }
};

EkfState make_narx_ekf(const NarxModel& model, const EkfHyper& h);
EkfState make_joint_ekf(const StateSpaceModel& model, const EkfHyper& h, const Vec& x0);

/// Parameter random-walk prediction (P += Q_theta) followed by a Joseph-form
/// measurement update with the model linearized at (x, theta).
/// Throws NumericalBreakdown if the innovation covariance is not positive
/// definite. The model is left synced to the updated theta.
void ekf_update_narx(EkfState& st, const EkfHyper& h, NarxModel& model, const Vec& x,
                     const Vec& y);

/// Runs the EKF over the dataset's stored pairs `epochs` times, carrying
/// theta and P across epochs.
EkfState batch_init_narx(NarxModel& model, const Dataset& ds, const EkfHyper& h, int epochs);

/// Joint state-and-parameter EKF step: propagate through u_prev (skipped when
/// u_prev is empty, i.e. the first measurement), then update with y.
void ekf_update_joint(EkfState& st, const EkfHyper& h, StateSpaceModel& model,
                      const Vec& u_prev, const Vec& y);

/// Hidden-state sequence x_{0|k} .. x_{k|k} reconstructed from the dataset,
/// one state per column, with smoothed covariances from the RTS pass.
struct SmoothedTrajectory {
  Mat states;
  std::vector<Mat> covariances;
  bool refinement_stalled = false;

  int length() const { return static_cast<int>(states.cols()); }
  Vec state(int j) const { return states.col(j); }
  Vec last() const { return states.col(states.cols() - 1); }
};

/// Forward EKF pass with frozen parameters, RTS smoothing, quasi-Newton
/// refinement of x_0 (prior-anchored, R-weighted output errors over the full
/// horizon), then a final forward EKF pass anchored at the refined x_0.
/// Uses outputs y_0..y_{T} and inputs u_0..u_{T-1}; the result has one state
/// per output.
SmoothedTrajectory reconstruct_states(const Dataset& ds, const StateSpaceModel& model,
                                      const EkfHyper& h, const Vec& x0_prior,
                                      int refine_max_iterations = 50);

/// Mean squared simulation error of a rollout from x0 against the dataset,
/// plus its gradient with respect to [theta_x, theta_y, x0]. Used by the
/// batch initializer.
double simulation_error(const StateSpaceModel& model, const Dataset& ds, const Vec& x0,
                        Vec* grad_theta_x, Vec* grad_theta_y, Vec* grad_x0);

struct SsInitResult {
  Vec x0;
  double objective = 0.0;
  int iterations = 0;
};

/// Batch initialization of a state-space model: limited-memory quasi-Newton
/// minimization of the mean squared simulation error over (theta_x, theta_y,
/// x0). The model is left at the optimized parameters.
SsInitResult batch_init_ss(StateSpaceModel& model, const Dataset& ds, int max_iterations,
                           double grad_tolerance = 1e-8);

/// QBC committee: replicated filters sharing hyperparameters; exactly
/// K_QBC - 1 replicas are updated per step (round-robin skip by default).
struct Committee {
  std::vector<EkfState> replicas;
  bool skip_enabled = true;
  bool randomized_skip = false;
  RngStream skip_rng;
  long steps_done = 0;

  int size() const { return static_cast<int>(replicas.size()); }
};

Committee make_committee(const EkfState& init, int k_qbc);

/// Applies `update_one` to every replica except the scheduled skip.
/// Returns the skipped index (-1 when skipping is disabled).
int committee_update(Committee& c, const std::function<void(EkfState&)>& update_one);

int committee_update_narx(Committee& c, const EkfHyper& h, NarxModel& scratch,
                          const Vec& x, const Vec& y);
int committee_update_joint(Committee& c, const EkfHyper& h, StateSpaceModel& scratch,
                           const Vec& u_prev, const Vec& y);

}  // namespace alsid
