#include "alsid/estimation.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace alsid {

namespace {

void symmetrize(Mat& P) { P = 0.5 * (P + P.transpose()).eval(); }

// Joseph-form measurement update written in its expanded form
//   P <- P - K (PH')' - (PH') K' + K S K'
// which is algebraically identical for any gain K and costs O(n^2 n_y).
void measurement_update(Vec& state, Mat& P, const Mat& H, const Vec& innovation,
                        const Mat& R) {
  const Mat PHt = P * H.transpose();
  Mat S = H * PHt + R;
  symmetrize(S);
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericalBreakdown("EKF: innovation covariance is not positive definite");
  const Mat K = llt.solve(PHt.transpose()).transpose();
  state += K * innovation;
  P = P - K * PHt.transpose() - PHt * K.transpose() + K * S * K.transpose();
  symmetrize(P);
}

Mat inverse_spd(const Mat& A, const char* what) {
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalBreakdown(what);
  return llt.solve(Mat::Identity(A.rows(), A.cols()));
}

}  // namespace

EkfHyper EkfHyper::isotropic_narx(int n_theta, int n_y, double p0, double q_theta,
                                  double r) {
  EkfHyper h;
  h.P0_theta = p0 * Mat::Identity(n_theta, n_theta);
  h.Q_theta = q_theta * Mat::Identity(n_theta, n_theta);
  h.R = r * Mat::Identity(n_y, n_y);
  return h;
}

EkfHyper EkfHyper::isotropic_joint(int n_x, int n_theta, int n_y, double p0_x,
                                   double p0_theta, double q_x, double q_theta, double r) {
  EkfHyper h = isotropic_narx(n_theta, n_y, p0_theta, q_theta, r);
  h.P0_x = p0_x * Mat::Identity(n_x, n_x);
  h.Q_x = q_x * Mat::Identity(n_x, n_x);
  return h;
}

EkfState make_narx_ekf(const NarxModel& model, const EkfHyper& h) {
  EkfState st;
  st.theta = model.params();
  st.P = h.P0_theta;
  return st;
}

EkfState make_joint_ekf(const StateSpaceModel& model, const EkfHyper& h, const Vec& x0) {
  const int nx = model.state_size();
  const int nt = model.param_count();
  EkfState st;
  st.theta = model.params();
  st.x_est = x0;
  st.P = Mat::Zero(nx + nt, nx + nt);
  st.P.topLeftCorner(nx, nx) = h.P0_x;
  st.P.bottomRightCorner(nt, nt) = h.P0_theta;
  return st;
}

void ekf_update_narx(EkfState& st, const EkfHyper& h, NarxModel& model, const Vec& x,
                     const Vec& y) {
  model.set_params(st.theta);
  st.P += h.Q_theta;  // parameter random walk: theta_{k+1|k} = theta_{k|k}
  const Vec innovation = y - model.predict(x);
  const Mat H = model.param_jacobian(x);
  measurement_update(st.theta, st.P, H, innovation, h.R);
  model.set_params(st.theta);
}

EkfState batch_init_narx(NarxModel& model, const Dataset& ds, const EkfHyper& h,
                         int epochs) {
  if (ds.num_pairs() < 1)
    throw InsufficientData("batch_init_narx: dataset has no regressor/target pairs");
  EkfState st = make_narx_ekf(model, h);
  for (int e = 0; e < epochs; ++e) {
    for (int j = 0; j < ds.num_pairs(); ++j) {
      ekf_update_narx(st, h, model, ds.features().col(j), ds.targets().col(j));
    }
  }
  return st;
}

void ekf_update_joint(EkfState& st, const EkfHyper& h, StateSpaceModel& model,
                      const Vec& u_prev, const Vec& y) {
  model.set_params(st.theta);
  const int nx = model.state_size();
  const int ntx = model.param_count_x();
  const int nt = model.param_count();
  const int n = nx + nt;

  if (u_prev.size() > 0) {
    // Time update through the transition: F has rows [A B 0] on top and
    // identity below, so F P F' only needs the top block products.
    const Mat A = model.jac_state_x(st.x_est, u_prev);
    const Mat B = model.jac_state_params(st.x_est, u_prev);
    const Vec x_next = model.step_state(st.x_est, u_prev);

    Mat G = st.P;
    G.topRows(nx) = A * st.P.topRows(nx) + B * st.P.middleRows(nx, ntx);
    Mat Gt = G.transpose();
    Mat FPFt_t = Gt;
    FPFt_t.topRows(nx) = A * Gt.topRows(nx) + B * Gt.middleRows(nx, ntx);
    st.P = FPFt_t.transpose();
    st.P.topLeftCorner(nx, nx) += h.Q_x;
    st.P.bottomRightCorner(nt, nt) += h.Q_theta;
    symmetrize(st.P);
    st.x_est = x_next;
  } else {
    st.P.bottomRightCorner(nt, nt) += h.Q_theta;
    symmetrize(st.P);
  }

  const Vec yhat = model.output(st.x_est);
  Mat H = Mat::Zero(y.size(), n);
  H.leftCols(nx) = model.jac_out_x(st.x_est);
  H.rightCols(model.param_count_y()) = model.jac_out_params(st.x_est);

  Vec xi(n);
  xi << st.x_est, st.theta;
  measurement_update(xi, st.P, H, y - yhat, h.R);
  st.x_est = xi.head(nx);
  st.theta = xi.tail(nt);
  model.set_params(st.theta);
}

SmoothedTrajectory reconstruct_states(const Dataset& ds, const StateSpaceModel& model,
                                      const EkfHyper& h, const Vec& x0_prior,
                                      int refine_max_iterations) {
  const int T = ds.num_outputs();
  if (T < 1) throw InsufficientData("reconstruct_states: dataset is empty");
  if (ds.num_inputs() < T - 1)
    throw InsufficientData("reconstruct_states: missing inputs for transitions");
  const int nx = model.state_size();
  if (h.P0_x.rows() != nx || h.Q_x.rows() != nx)
    throw DimensionMismatch("reconstruct_states: hyperparameters lack state blocks");

  std::vector<Vec> x_pred(T), x_filt(T);
  std::vector<Mat> P_pred(T), P_filt(T), A(T);

  // Forward EKF pass, parameters frozen at the model's current values.
  Vec x = x0_prior;
  Mat P = h.P0_x;
  for (int j = 0; j < T; ++j) {
    x_pred[j] = x;
    P_pred[j] = P;
    const Mat C = model.jac_out_x(x);
    measurement_update(x, P, C, ds.output(j) - model.output(x), h.R);
    x_filt[j] = x;
    P_filt[j] = P;
    if (j < T - 1) {
      A[j] = model.jac_state_x(x, ds.input(j));
      const Vec xn = model.step_state(x, ds.input(j));
      P = A[j] * P * A[j].transpose() + h.Q_x;
      symmetrize(P);
      x = xn;
    }
  }

  // Backward RTS pass.
  std::vector<Vec> x_sm(T);
  std::vector<Mat> P_sm(T);
  x_sm[T - 1] = x_filt[T - 1];
  P_sm[T - 1] = P_filt[T - 1];
  for (int j = T - 2; j >= 0; --j) {
    Eigen::LDLT<Mat> ldlt(P_pred[j + 1]);
    if (ldlt.info() != Eigen::Success)
      throw NumericalBreakdown("reconstruct_states: singular predicted covariance");
    const Mat G = ldlt.solve(A[j] * P_filt[j]).transpose();
    x_sm[j] = x_filt[j] + G * (x_sm[j + 1] - x_pred[j + 1]);
    P_sm[j] = P_filt[j] + G * (P_sm[j + 1] - P_pred[j + 1]) * G.transpose();
    symmetrize(P_sm[j]);
  }

  // Quasi-Newton refinement of x_0: prior-anchored, R-weighted one-step
  // output errors along the deterministic rollout.
  const Mat Rinv = inverse_spd(h.R, "reconstruct_states: R not positive definite");
  const Mat P0inv = inverse_spd(h.P0_x, "reconstruct_states: P0_x not positive definite");
  auto objective = [&](const Vec& x0, Vec& grad) -> double {
    std::vector<Vec> xs(T);
    xs[0] = x0;
    for (int j = 0; j + 1 < T; ++j) xs[j + 1] = model.step_state(xs[j], ds.input(j));
    double value = (x0 - x0_prior).dot(P0inv * (x0 - x0_prior));
    std::vector<Vec> gy(T);
    for (int j = 0; j < T; ++j) {
      const Vec r = model.output(xs[j]) - ds.output(j);
      value += r.dot(Rinv * r);
      gy[j] = 2.0 * (Rinv * r);
    }
    Vec lambda = model.jac_out_x(xs[T - 1]).transpose() * gy[T - 1];
    for (int j = T - 2; j >= 0; --j) {
      lambda = model.jac_state_x(xs[j], ds.input(j)).transpose() * lambda +
               model.jac_out_x(xs[j]).transpose() * gy[j];
    }
    grad = lambda + 2.0 * (P0inv * (x0 - x0_prior));
    return value;
  };

  LbfgsOptions opts;
  opts.max_iterations = refine_max_iterations;
  opts.grad_tolerance = 1e-10;
  const LbfgsResult refined = lbfgs_minimize(objective, x_sm[0], opts);

  SmoothedTrajectory out;
  out.refinement_stalled = refined.stalled;
  const Vec x0 = refined.stalled ? x_sm[0] : refined.x;

  // Final forward pass anchored at the refined x_0 (zero initial covariance:
  // the refinement already consumed the full record).
  out.states.resize(nx, T);
  x = x0;
  P = Mat::Zero(nx, nx);
  for (int j = 0; j < T; ++j) {
    const Mat C = model.jac_out_x(x);
    measurement_update(x, P, C, ds.output(j) - model.output(x), h.R);
    out.states.col(j) = x;
    if (j < T - 1) {
      const Mat Aj = model.jac_state_x(x, ds.input(j));
      P = Aj * P * Aj.transpose() + h.Q_x;
      symmetrize(P);
      x = model.step_state(x, ds.input(j));
    }
  }
  out.covariances = std::move(P_sm);
  return out;
}

double simulation_error(const StateSpaceModel& model, const Dataset& ds, const Vec& x0,
                        Vec* grad_theta_x, Vec* grad_theta_y, Vec* grad_x0) {
  const int T = ds.num_outputs();
  if (T < 1) throw InsufficientData("simulation_error: dataset is empty");
  if (ds.num_inputs() < T - 1)
    throw InsufficientData("simulation_error: missing inputs for transitions");

  std::vector<Vec> xs(T);
  xs[0] = x0;
  for (int j = 0; j + 1 < T; ++j) xs[j + 1] = model.step_state(xs[j], ds.input(j));

  const double scale = 1.0 / static_cast<double>(T);
  double value = 0.0;
  std::vector<Vec> gy(T);
  for (int j = 0; j < T; ++j) {
    const Vec r = model.output(xs[j]) - ds.output(j);
    value += scale * r.squaredNorm();
    gy[j] = 2.0 * scale * r;
  }
  if (!grad_theta_x && !grad_theta_y && !grad_x0) return value;

  Vec gtx = Vec::Zero(model.param_count_x());
  Vec gty = Vec::Zero(model.param_count_y());
  Vec lambda = model.jac_out_x(xs[T - 1]).transpose() * gy[T - 1];
  gty += model.jac_out_params(xs[T - 1]).transpose() * gy[T - 1];
  for (int j = T - 2; j >= 0; --j) {
    gtx += model.jac_state_params(xs[j], ds.input(j)).transpose() * lambda;
    lambda = model.jac_state_x(xs[j], ds.input(j)).transpose() * lambda +
             model.jac_out_x(xs[j]).transpose() * gy[j];
    gty += model.jac_out_params(xs[j]).transpose() * gy[j];
  }
  if (grad_theta_x) *grad_theta_x = gtx;
  if (grad_theta_y) *grad_theta_y = gty;
  if (grad_x0) *grad_x0 = lambda;
  return value;
}

SsInitResult batch_init_ss(StateSpaceModel& model, const Dataset& ds, int max_iterations,
                           double grad_tolerance) {
  const int ntx = model.param_count_x();
  const int nty = model.param_count_y();
  const int nx = model.state_size();

  Vec p(ntx + nty + nx);
  p << model.params_x(), model.params_y(), Vec::Zero(nx);

  auto objective = [&](const Vec& v, Vec& grad) -> double {
    model.set_params_x(v.head(ntx));
    model.set_params_y(v.segment(ntx, nty));
    Vec gtx, gty, gx0;
    const double value = simulation_error(model, ds, v.tail(nx), &gtx, &gty, &gx0);
    grad.resize(v.size());
    grad << gtx, gty, gx0;
    return value;
  };

  LbfgsOptions opts;
  opts.max_iterations = max_iterations;
  opts.grad_tolerance = grad_tolerance;
  const LbfgsResult res = lbfgs_minimize(objective, p, opts);

  model.set_params_x(res.x.head(ntx));
  model.set_params_y(res.x.segment(ntx, nty));
  SsInitResult out;
  out.x0 = res.x.tail(nx);
  out.objective = res.value;
  out.iterations = res.iterations;
  return out;
}

Committee make_committee(const EkfState& init, int k_qbc) {
  if (k_qbc < 2) throw Error("make_committee: K_QBC must be at least 2");
  Committee c;
  c.replicas.assign(static_cast<size_t>(k_qbc), init);
  return c;
}

int committee_update(Committee& c, const std::function<void(EkfState&)>& update_one) {
  const int k = c.size();
  if (k < 2) throw Error("committee_update: K_QBC must be at least 2");
  int skip = -1;
  if (c.skip_enabled) {
    skip = c.randomized_skip
               ? static_cast<int>(c.skip_rng.uniform_index(static_cast<std::uint64_t>(k)))
               : static_cast<int>(c.steps_done % k);
  }
  for (int j = 0; j < k; ++j) {
    if (j == skip) continue;
    update_one(c.replicas[static_cast<size_t>(j)]);
  }
  ++c.steps_done;
  return skip;
}

int committee_update_narx(Committee& c, const EkfHyper& h, NarxModel& scratch,
                          const Vec& x, const Vec& y) {
  return committee_update(
      c, [&](EkfState& st) { ekf_update_narx(st, h, scratch, x, y); });
}

int committee_update_joint(Committee& c, const EkfHyper& h, StateSpaceModel& scratch,
                           const Vec& u_prev, const Vec& y) {
  return committee_update(
      c, [&](EkfState& st) { ekf_update_joint(st, h, scratch, u_prev, y); });
}

}  // namespace alsid
