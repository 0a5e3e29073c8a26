#include "alsid/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace alsid {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_vec(const Vec& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ';';
    out += format_double(v[i]);
  }
  return out;
}

Vec split_vec(const std::string& field) {
  std::vector<double> values;
  std::string token;
  std::istringstream in(field);
  while (std::getline(in, token, ';')) values.push_back(std::stod(token));
  Vec out(static_cast<Eigen::Index>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[i];
  return out;
}

Vec nan_vec(int n) { return Vec::Constant(n, std::numeric_limits<double>::quiet_NaN()); }

struct TestEval {
  double rmse = 0.0;
  double r2 = 0.0;
};

// One-step-ahead test metrics for a NARX model over a pre-scaled test
// dataset; returns physical-unit RMSE.
TestEval eval_narx_test(const NarxModel& model, const Scaler& ys, const Dataset& test_ds) {
  const auto F = test_ds.features();
  if (F.cols() < 1) throw InsufficientData("test set shorter than the lag depth");
  const Mat preds = model.predict_cols(F);
  const auto P = F.cols();
  const auto ny = preds.rows();
  Mat y(P, ny), yhat(P, ny);
  for (Eigen::Index j = 0; j < P; ++j) {
    y.row(j) = ys.unscale(test_ds.targets().col(j)).transpose();
    yhat.row(j) = ys.unscale(preds.col(j)).transpose();
  }
  return {rmse(y, yhat), r_squared(y, yhat)};
}

// One-step-ahead test metrics for a state-space model: a state-only EKF with
// frozen parameters filters the test sequence; the prediction of y_k is made
// from the prior state estimate.
TestEval eval_ss_test(const StateSpaceModel& model, const EkfHyper& hyper,
                      const Scaler& us, const Scaler& ys, const TestSet& test) {
  const int n = test.size();
  const int nx = model.state_size();
  const auto ny = static_cast<Eigen::Index>(model.output_size());
  Mat y(n, ny), yhat(n, ny);

  Vec x = Vec::Zero(nx);
  Mat P = hyper.P0_x;
  for (int k = 0; k < n; ++k) {
    const Vec yk = ys.scale(test.y.row(k).transpose());
    const Vec pred = model.output(x);
    y.row(k) = ys.unscale(yk).transpose();
    yhat.row(k) = ys.unscale(pred).transpose();

    const Mat C = model.jac_out_x(x);
    const Mat PHt = P * C.transpose();
    Mat S = C * PHt + hyper.R;
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success)
      throw NumericalBreakdown("eval_ss_test: innovation covariance breakdown");
    const Mat K = llt.solve(PHt.transpose()).transpose();
    x += K * (yk - pred);
    P = P - K * PHt.transpose() - PHt * K.transpose() + K * S * K.transpose();
    P = 0.5 * (P + P.transpose()).eval();

    if (k < n - 1) {
      const Vec uk = us.scale(test.u.row(k).transpose());
      const Mat A = model.jac_state_x(x, uk);
      P = A * P * A.transpose() + hyper.Q_x;
      P = 0.5 * (P + P.transpose()).eval();
      x = model.step_state(x, uk);
    }
  }
  return {rmse(y, yhat), r_squared(y, yhat)};
}

double trace_rmse_train(const RunTrace& trace, int n_init) {
  double total = 0.0;
  long count = 0;
  for (const RunRecord& rec : trace.records) {
    if (rec.k < n_init || rec.yhat.size() == 0 || !rec.yhat.allFinite()) continue;
    total += (rec.y - rec.yhat).squaredNorm();
    ++count;
  }
  return count > 0 ? std::sqrt(total / static_cast<double>(count)) : 0.0;
}

// Physical constraint bounds for the run: config override wins, else the
// plant's bounds.
void resolve_bounds(const ExperimentConfig& cfg, const PlantSpec& plant, Vec& y_min,
                    Vec& y_max) {
  y_min = cfg.y_min_override.size() > 0 ? cfg.y_min_override : plant.y_min;
  y_max = cfg.y_max_override.size() > 0 ? cfg.y_max_override : plant.y_max;
  if (cfg.penalty_mode != PenaltyMode::None && (y_min.size() == 0 || y_max.size() == 0))
    throw Error("run: penalty enabled but no output bounds configured");
}

PenaltyConfig scaled_penalty(const ExperimentConfig& cfg, const Scaler& ys,
                             const Vec& y_min, const Vec& y_max) {
  PenaltyConfig pen;
  pen.mode = cfg.penalty_mode;
  pen.rho = cfg.rho;
  pen.alpha_quantile = cfg.alpha_quantile;
  pen.beta_cap = cfg.beta_cap;
  if (pen.mode != PenaltyMode::None) {
    pen.y_min = ys.scale(y_min);
    pen.y_max = ys.scale(y_max);
  }
  return pen;
}

struct PassivePhase {
  std::vector<Vec> u_phys;
  std::vector<Vec> y_phys;
  Vec x_final;
};

// The passive phase consumes the same stream draws for every strategy and
// model kind, so traces share a bitwise-identical prefix at a fixed seed.
PassivePhase run_passive_phase(const PlantSpec& plant, const ExperimentConfig& cfg,
                               const NoiseModel& noise, RngStream& passive,
                               RunTrace& trace) {
  PassivePhase ph;
  const auto M = static_cast<std::uint64_t>(plant.pool.rows());
  Vec x = plant.x0;
  for (int k = 0; k < cfg.n_init; ++k) {
    const Vec y = measure(plant, x, noise, static_cast<std::uint64_t>(k));
    const auto idx = passive.uniform_index(M);
    const Vec u = plant.pool.row(static_cast<Eigen::Index>(idx)).transpose();
    RunRecord rec;
    rec.k = k;
    rec.u = u;
    rec.y = y;
    rec.yhat = nan_vec(plant.output_size);
    trace.records.push_back(std::move(rec));
    x = integrate_step(plant, x, u);
    ph.u_phys.push_back(u);
    ph.y_phys.push_back(y);
  }
  ph.x_final = x;
  return ph;
}

}  // namespace

PlantSpec plant_from_config(const ExperimentConfig& cfg) {
  constexpr std::string_view custom_prefix = "custom:";
  if (cfg.plant.rfind(custom_prefix, 0) == 0)
    return load_plant_file(cfg.plant.substr(custom_prefix.size()));
  return make_benchmark(cfg.plant);
}

TestSet generate_test_set(const PlantSpec& plant, int n_test, std::uint64_t test_seed) {
  NoiseModel noise{plant.gamma, RngStream(test_seed, "test-noise")};
  RngStream inputs(test_seed, "test-inputs");
  const auto M = static_cast<std::uint64_t>(plant.pool.rows());

  TestSet test;
  test.u.resize(n_test, plant.input_size);
  test.y.resize(n_test, plant.output_size);
  Vec x = plant.x0;
  for (int k = 0; k < n_test; ++k) {
    test.y.row(k) = measure(plant, x, noise, static_cast<std::uint64_t>(k)).transpose();
    const Vec u = plant.pool.row(static_cast<Eigen::Index>(inputs.uniform_index(M))).transpose();
    test.u.row(k) = u.transpose();
    x = integrate_step(plant, x, u);
  }
  return test;
}

RunResult run_narx(const ExperimentConfig& cfg, std::uint64_t seed, const TestSet* test) {
  const PlantSpec plant = plant_from_config(cfg);
  const LagOrders lags{cfg.n_a, cfg.n_b, plant.input_size, plant.output_size};

  NoiseModel noise{plant.gamma, RngStream(seed, "noise")};
  RngStream passive(seed, "passive-inputs");
  RngStream weights(seed, "init-weights");

  RunResult out;
  out.trace.records.reserve(static_cast<size_t>(cfg.n_total));
  const PassivePhase ph = run_passive_phase(plant, cfg, noise, passive, out.trace);

  const Scaler us = Scaler::fit(ph.u_phys);
  const Scaler ys = Scaler::fit(ph.y_phys);
  Dataset ds(lags);
  for (int k = 0; k < cfg.n_init; ++k)
    ds.append_sample(us.scale(ph.u_phys[static_cast<size_t>(k)]),
                     ys.scale(ph.y_phys[static_cast<size_t>(k)]));
  const InputPool pool = InputPool::from_physical(plant.pool, us);

  std::unique_ptr<NarxModel> model;
  if (cfg.model_kind == ModelKind::LinearArx) {
    model = std::make_unique<LinearArx>(lags.feature_size(), lags.n_y);
  } else {
    auto net = std::make_unique<NarxNet>(lags.feature_size(), cfg.n1, cfg.n2, lags.n_y);
    net->init_weights(weights);
    model = std::move(net);
  }
  const EkfHyper hyper =
      EkfHyper::isotropic_narx(model->param_count(), lags.n_y, cfg.p0, cfg.q_theta, cfg.r);
  EkfState st = batch_init_narx(*model, ds, hyper, cfg.n_epochs);

  const bool qbc = cfg.strategy == Strategy::Qbc;
  Committee committee;
  std::vector<std::unique_ptr<NarxModel>> replica_models;
  if (qbc) {
    committee = make_committee(st, cfg.k_qbc);
    committee.randomized_skip = cfg.randomized_committee_skip;
    committee.skip_rng = RngStream(seed, "committee-skip");
    for (int j = 0; j < cfg.k_qbc; ++j) replica_models.push_back(model->clone());
  }

  Vec y_min_phys, y_max_phys;
  resolve_bounds(cfg, plant, y_min_phys, y_max_phys);
  const PenaltyConfig pen = scaled_penalty(cfg, ys, y_min_phys, y_max_phys);

  // Test-set regressors are fixed; build them once for curve checkpoints.
  Dataset test_ds(lags);
  if (test && test->size() > 0) {
    for (int k = 0; k < test->size(); ++k)
      test_ds.append_sample(us.scale(test->u.row(k).transpose()),
                            ys.scale(test->y.row(k).transpose()));
  }

  auto sync_replicas = [&]() {
    for (int j = 0; j < committee.size(); ++j)
      replica_models[static_cast<size_t>(j)]->set_params(
          committee.replicas[static_cast<size_t>(j)].theta);
  };
  auto committee_mean_predict = [&](const Vec& xreg) {
    Vec mean = Vec::Zero(lags.n_y);
    for (const auto& m : replica_models) mean += m->predict(xreg);
    return Vec(mean / static_cast<double>(replica_models.size()));
  };

  Vec x = ph.x_final;
  const auto M = static_cast<std::uint64_t>(plant.pool.rows());
  try {
    for (int k = cfg.n_init; k <= cfg.n_total; ++k) {
      const Vec y_phys = measure(plant, x, noise, static_cast<std::uint64_t>(k));
      const Vec y_s = ys.scale(y_phys);
      const Vec x_prev = ds.cached_regressor(k - 1);

      Vec yhat_s;
      if (qbc) {
        sync_replicas();
        yhat_s = committee_mean_predict(x_prev);
        committee_update_narx(committee, hyper, *model, x_prev, y_s);
        sync_replicas();
      } else {
        yhat_s = model->predict(x_prev);
        ekf_update_narx(st, hyper, *model, x_prev, y_s);
      }
      ds.append_output(y_s);
      if (k == cfg.n_total) break;

      const auto t0 = Clock::now();
      Selection sel;
      if (cfg.strategy == Strategy::Passive) {
        sel.index = static_cast<int>(passive.uniform_index(M));
        sel.sequence = {sel.index};
      } else {
        AcquisitionContext ctx;
        ctx.kernel = cfg.kernel;
        ctx.delta = cfg.delta;
        ctx.horizon = cfg.horizon;
        ctx.enumeration_budget = cfg.enumeration_budget;
        ctx.penalty = pen;
        ctx.pool = &pool;
        ctx.feats = ds.features();
        ctx.targets = ds.targets();
        ctx.feature_template = ds.build_regressor(k, Vec::Zero(lags.n_u)).values;
        ctx.u_offset = lags.n_a * lags.n_y;
        ctx.n_u = lags.n_u;
        ctx.lags = lags;
        if (qbc) {
          for (const auto& m : replica_models) {
            const NarxModel* mp = m.get();
            ctx.committee.emplace_back([mp](const Vec& f) { return mp->predict(f); });
          }
        } else {
          const NarxModel* mp = model.get();
          ctx.predict = [mp](const Vec& f) { return mp->predict(f); };
          ctx.predict_cols = [mp](const Eigen::Ref<const Mat>& F) {
            return mp->predict_cols(F);
          };
        }
        sel = select(ctx, cfg.strategy);
        if (sel.greedy_fallback) out.trace.multistep_greedy_used = true;
      }
      const double elapsed = ms_since(t0);

      const Vec u_phys = plant.pool.row(sel.index).transpose();
      ds.append_input(pool.candidate(sel.index));

      RunRecord rec;
      rec.k = k;
      rec.u = u_phys;
      rec.y = y_phys;
      rec.yhat = ys.unscale(yhat_s);
      rec.score = sel.score;
      rec.penalty = sel.penalty;
      rec.step_ms = elapsed;
      out.trace.records.push_back(std::move(rec));

      x = integrate_step(plant, x, u_phys);

      if (test_ds.num_pairs() > 0 &&
          ((k - cfg.n_init) % cfg.eval_every == 0 || k == cfg.n_total - 1)) {
        if (qbc) sync_replicas();
        const NarxModel& eval_model = qbc ? *replica_models[0] : *model;
        out.rmse_curve.emplace_back(k, eval_narx_test(eval_model, ys, test_ds).rmse);
      }
    }
  } catch (const NumericalBreakdown& e) {
    out.trace.status = std::string("aborted: ") + e.what();
  }

  Vec theta_final;
  if (qbc) {
    theta_final = Vec::Zero(model->param_count());
    for (const auto& rep : committee.replicas) theta_final += rep.theta;
    theta_final /= static_cast<double>(committee.size());
  } else {
    theta_final = st.theta;
  }
  out.checkpoint.kind = cfg.model_kind;
  out.checkpoint.lags = lags;
  out.checkpoint.n1 = cfg.n1;
  out.checkpoint.n2 = cfg.n2;
  out.checkpoint.u_scaler = us;
  out.checkpoint.y_scaler = ys;
  out.checkpoint.theta = theta_final;

  out.metrics.rmse_train = trace_rmse_train(out.trace, cfg.n_init);
  if (y_min_phys.size() > 0)
    out.metrics.mcv =
        mean_constraint_violation(out.trace, y_min_phys, y_max_phys, cfg.n_init);
  if (test_ds.num_pairs() > 0 && out.trace.ok()) {
    model->set_params(theta_final);
    const TestEval te = eval_narx_test(*model, ys, test_ds);
    out.metrics.rmse_test = te.rmse;
    out.metrics.r2_test = te.r2;
  }
  return out;
}

RunResult run_ss(const ExperimentConfig& cfg, std::uint64_t seed, const TestSet* test) {
  const PlantSpec plant = plant_from_config(cfg);
  const LagOrders lags{0, 0, plant.input_size, plant.output_size};

  NoiseModel noise{plant.gamma, RngStream(seed, "noise")};
  RngStream passive(seed, "passive-inputs");
  RngStream weights(seed, "init-weights");

  RunResult out;
  out.trace.records.reserve(static_cast<size_t>(cfg.n_total));
  const PassivePhase ph = run_passive_phase(plant, cfg, noise, passive, out.trace);

  const Scaler us = Scaler::fit(ph.u_phys);
  const Scaler ys = Scaler::fit(ph.y_phys);
  Dataset ds(lags);
  for (int k = 0; k < cfg.n_init; ++k)
    ds.append_sample(us.scale(ph.u_phys[static_cast<size_t>(k)]),
                     ys.scale(ph.y_phys[static_cast<size_t>(k)]));
  const InputPool pool = InputPool::from_physical(plant.pool, us);

  RnnSS model(cfg.n_x, lags.n_u, lags.n_y, cfg.n1x, cfg.n2x, cfg.n1y);
  model.init_weights(weights);
  const SsInitResult init = batch_init_ss(model, ds, cfg.n_batch);

  const EkfHyper hyper = EkfHyper::isotropic_joint(
      cfg.n_x, model.param_count(), lags.n_y, cfg.p0_x, cfg.p0, cfg.q_x, cfg.q_theta, cfg.r);

  EkfState st = make_joint_ekf(model, hyper, init.x0);
  for (int j = 0; j < cfg.n_init; ++j) {
    const Vec u_prev = j > 0 ? us.scale(ph.u_phys[static_cast<size_t>(j - 1)]) : Vec();
    ekf_update_joint(st, hyper, model, u_prev, ys.scale(ph.y_phys[static_cast<size_t>(j)]));
  }

  const bool qbc = cfg.strategy == Strategy::Qbc;
  Committee committee;
  std::vector<std::unique_ptr<StateSpaceModel>> replica_models;
  if (qbc) {
    committee = make_committee(st, cfg.k_qbc);
    committee.randomized_skip = cfg.randomized_committee_skip;
    committee.skip_rng = RngStream(seed, "committee-skip");
    for (int j = 0; j < cfg.k_qbc; ++j) replica_models.push_back(model.clone());
  }
  auto sync_replicas = [&]() {
    for (int j = 0; j < committee.size(); ++j)
      replica_models[static_cast<size_t>(j)]->set_params(
          committee.replicas[static_cast<size_t>(j)].theta);
  };
  auto current_state = [&]() -> const Vec& {
    return qbc ? committee.replicas[0].x_est : st.x_est;
  };
  auto sync_model_for_reconstruct = [&]() {
    model.set_params(qbc ? committee.replicas[0].theta : st.theta);
  };

  sync_model_for_reconstruct();
  SmoothedTrajectory traj = reconstruct_states(ds, model, hyper, init.x0);
  out.trace.refinement_stalled_count += traj.refinement_stalled ? 1 : 0;
  Vec x0_anchor = traj.state(0);
  std::vector<Vec> xs;
  for (int j = 0; j < traj.length(); ++j) xs.push_back(traj.state(j));

  Vec y_min_phys, y_max_phys;
  resolve_bounds(cfg, plant, y_min_phys, y_max_phys);
  const PenaltyConfig pen = scaled_penalty(cfg, ys, y_min_phys, y_max_phys);

  std::vector<Vec> u_scaled;
  for (const Vec& u : ph.u_phys) u_scaled.push_back(us.scale(u));

  Vec x = ph.x_final;
  const auto M = static_cast<std::uint64_t>(plant.pool.rows());
  int age = 0;
  try {
    for (int k = cfg.n_init; k <= cfg.n_total; ++k) {
      const Vec y_phys = measure(plant, x, noise, static_cast<std::uint64_t>(k));
      const Vec y_s = ys.scale(y_phys);
      const Vec& u_prev = u_scaled.back();

      Vec yhat_s;
      if (qbc) {
        sync_replicas();
        Vec mean = Vec::Zero(lags.n_y);
        for (int j = 0; j < committee.size(); ++j) {
          const auto& m = *replica_models[static_cast<size_t>(j)];
          mean += m.output(m.step_state(committee.replicas[static_cast<size_t>(j)].x_est, u_prev));
        }
        yhat_s = mean / static_cast<double>(committee.size());
        committee_update_joint(committee, hyper, model, u_prev, y_s);
        sync_replicas();
      } else {
        yhat_s = model.output(model.step_state(st.x_est, u_prev));
        ekf_update_joint(st, hyper, model, u_prev, y_s);
      }
      ds.append_output(y_s);
      xs.push_back(current_state());

      if ((k - cfg.n_init) % cfg.reconstruct_every == 0) {
        sync_model_for_reconstruct();
        traj = reconstruct_states(ds, model, hyper, x0_anchor);
        out.trace.refinement_stalled_count += traj.refinement_stalled ? 1 : 0;
        x0_anchor = traj.state(0);
        xs.clear();
        for (int j = 0; j < traj.length(); ++j) xs.push_back(traj.state(j));
        age = 0;
      } else {
        ++age;
      }
      if (k == cfg.n_total) break;

      const auto t0 = Clock::now();
      Selection sel;
      if (cfg.strategy == Strategy::Passive) {
        sel.index = static_cast<int>(passive.uniform_index(M));
        sel.sequence = {sel.index};
      } else {
        const int nx = cfg.n_x;
        AcquisitionContext ctx;
        ctx.kernel = cfg.kernel;
        ctx.delta = cfg.delta;
        ctx.alpha_state = cfg.alpha_state;
        ctx.horizon = cfg.horizon;
        ctx.enumeration_budget = cfg.enumeration_budget;
        ctx.penalty = pen;
        ctx.pool = &pool;
        ctx.trajectory_age = age;
        ctx.max_trajectory_age = cfg.reconstruct_every;

        // Memory: q_i = [x_{i|k}, u_i] with the following output and state.
        const int P = k;  // pairs i = 0 .. k-1
        ctx.feats.resize(nx + lags.n_u, P);
        ctx.targets.resize(lags.n_y, P);
        ctx.next_states.resize(nx, P);
        for (int i = 0; i < P; ++i) {
          ctx.feats.block(0, i, nx, 1) = xs[static_cast<size_t>(i)];
          ctx.feats.block(nx, i, lags.n_u, 1) = u_scaled[static_cast<size_t>(i)];
          ctx.targets.col(i) = ds.output(i + 1);  // already scaled
          ctx.next_states.col(i) = xs[static_cast<size_t>(i + 1)];
        }
        ctx.feature_template.resize(nx + lags.n_u);
        ctx.feature_template << xs.back(), Vec::Zero(lags.n_u);
        ctx.u_offset = nx;
        ctx.n_u = lags.n_u;

        if (qbc) {
          for (const auto& m : replica_models) {
            const StateSpaceModel* mp = m.get();
            ctx.committee.emplace_back([mp, nx](const Vec& q) {
              return mp->output(mp->step_state(q.head(nx), q.tail(q.size() - nx)));
            });
          }
          const StateSpaceModel* mp = replica_models[0].get();
          ctx.predict_state = [mp, nx](const Vec& q) {
            return mp->step_state(q.head(nx), q.tail(q.size() - nx));
          };
          ctx.output_of_state = [mp](const Vec& xv) { return mp->output(xv); };
        } else {
          const StateSpaceModel* mp = &model;
          ctx.predict_state = [mp, nx](const Vec& q) {
            return mp->step_state(q.head(nx), q.tail(q.size() - nx));
          };
          ctx.output_of_state = [mp](const Vec& xv) { return mp->output(xv); };
        }
        sel = select_ss(ctx, cfg.strategy);
        if (sel.greedy_fallback) out.trace.multistep_greedy_used = true;
      }
      const double elapsed = ms_since(t0);

      const Vec u_phys = plant.pool.row(sel.index).transpose();
      ds.append_input(pool.candidate(sel.index));
      u_scaled.push_back(pool.candidate(sel.index));

      RunRecord rec;
      rec.k = k;
      rec.u = u_phys;
      rec.y = y_phys;
      rec.yhat = ys.unscale(yhat_s);
      rec.score = sel.score;
      rec.penalty = sel.penalty;
      rec.step_ms = elapsed;
      out.trace.records.push_back(std::move(rec));

      x = integrate_step(plant, x, u_phys);

      if (test && test->size() > 0 &&
          ((k - cfg.n_init) % cfg.eval_every == 0 || k == cfg.n_total - 1)) {
        sync_model_for_reconstruct();
        out.rmse_curve.emplace_back(k, eval_ss_test(model, hyper, us, ys, *test).rmse);
      }
    }
  } catch (const NumericalBreakdown& e) {
    out.trace.status = std::string("aborted: ") + e.what();
  }

  Vec theta_final;
  if (qbc) {
    theta_final = Vec::Zero(model.param_count());
    for (const auto& rep : committee.replicas) theta_final += rep.theta;
    theta_final /= static_cast<double>(committee.size());
  } else {
    theta_final = st.theta;
  }
  out.checkpoint.kind = ModelKind::RnnSs;
  out.checkpoint.lags = lags;
  out.checkpoint.n_x = cfg.n_x;
  out.checkpoint.n1x = cfg.n1x;
  out.checkpoint.n2x = cfg.n2x;
  out.checkpoint.n1y = cfg.n1y;
  out.checkpoint.u_scaler = us;
  out.checkpoint.y_scaler = ys;
  out.checkpoint.theta = theta_final;

  out.metrics.rmse_train = trace_rmse_train(out.trace, cfg.n_init);
  if (y_min_phys.size() > 0)
    out.metrics.mcv =
        mean_constraint_violation(out.trace, y_min_phys, y_max_phys, cfg.n_init);
  if (test && test->size() > 0 && out.trace.ok()) {
    model.set_params(theta_final);
    const TestEval te = eval_ss_test(model, hyper, us, ys, *test);
    out.metrics.rmse_test = te.rmse;
    out.metrics.r2_test = te.r2;
  }
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                         const TestSet* test) {
  cfg.validate();
  TestSet generated;
  if (!test && cfg.n_test > 0) {
    generated = generate_test_set(plant_from_config(cfg), cfg.n_test, cfg.test_seed);
    test = &generated;
  }
  if (cfg.model_kind == ModelKind::RnnSs) return run_ss(cfg, seed, test);
  return run_narx(cfg, seed, test);
}

RunMetrics evaluate(const Checkpoint& ckpt, const RunTrace& trace, const TestSet& test,
                    const ExperimentConfig& cfg) {
  RunMetrics m;
  m.rmse_train = trace_rmse_train(trace, cfg.n_init);

  const PlantSpec plant = plant_from_config(cfg);
  Vec y_min, y_max;
  y_min = cfg.y_min_override.size() > 0 ? cfg.y_min_override : plant.y_min;
  y_max = cfg.y_max_override.size() > 0 ? cfg.y_max_override : plant.y_max;
  if (y_min.size() > 0)
    m.mcv = mean_constraint_violation(trace, y_min, y_max, cfg.n_init);

  if (test.size() > 0) {
    if (ckpt.kind == ModelKind::RnnSs) {
      auto model = ckpt.make_ss_model();
      const EkfHyper hyper =
          EkfHyper::isotropic_joint(ckpt.n_x, model->param_count(), ckpt.lags.n_y,
                                    cfg.p0_x, cfg.p0, cfg.q_x, cfg.q_theta, cfg.r);
      const TestEval te = eval_ss_test(*model, hyper, ckpt.u_scaler, ckpt.y_scaler, test);
      m.rmse_test = te.rmse;
      m.r2_test = te.r2;
    } else {
      auto model = ckpt.make_narx_model();
      Dataset test_ds(ckpt.lags);
      for (int k = 0; k < test.size(); ++k)
        test_ds.append_sample(ckpt.u_scaler.scale(test.u.row(k).transpose()),
                              ckpt.y_scaler.scale(test.y.row(k).transpose()));
      const TestEval te = eval_narx_test(*model, ckpt.y_scaler, test_ds);
      m.rmse_test = te.rmse;
      m.r2_test = te.r2;
    }
  }
  return m;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<Strategy>& strategies,
                  int n_runs) {
  TestSet test;
  if (cfg.n_test > 0)
    test = generate_test_set(plant_from_config(cfg), cfg.n_test, cfg.test_seed);

  SweepResult result;
  result.strategies.resize(strategies.size());
  for (size_t si = 0; si < strategies.size(); ++si) {
    result.strategies[si].strategy = strategies[si];
    result.strategies[si].runs.resize(static_cast<size_t>(n_runs));
  }

  struct Task {
    size_t si;
    int run;
  };
  std::vector<Task> tasks;
  for (size_t si = 0; si < strategies.size(); ++si)
    for (int r = 0; r < n_runs; ++r) tasks.push_back({si, r});

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      ExperimentConfig run_cfg = cfg;
      run_cfg.strategy = strategies[tasks[t].si];
      run_cfg.threads = 1;
      result.strategies[tasks[t].si].runs[static_cast<size_t>(tasks[t].run)] =
          run_experiment(run_cfg, cfg.seed + static_cast<std::uint64_t>(tasks[t].run),
                         cfg.n_test > 0 ? &test : nullptr);
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  for (StrategySweep& ss : result.strategies) {
    std::vector<RunMetrics> ok_metrics;
    int aborted = 0;
    for (const RunResult& r : ss.runs) {
      if (r.trace.ok()) {
        ok_metrics.push_back(r.metrics);
      } else {
        ++aborted;
      }
    }
    ss.report = aggregate_metrics(ok_metrics, aborted);

    // Median/MAD curves across runs at the shared checkpoint steps.
    const RunResult* first_ok = nullptr;
    for (const RunResult& r : ss.runs)
      if (r.trace.ok() && !r.rmse_curve.empty()) {
        first_ok = &r;
        break;
      }
    if (first_ok) {
      for (size_t p = 0; p < first_ok->rmse_curve.size(); ++p) {
        std::vector<double> at_step;
        for (const RunResult& r : ss.runs) {
          if (!r.trace.ok() || r.rmse_curve.size() <= p) continue;
          at_step.push_back(r.rmse_curve[p].second);
        }
        ss.curve_steps.push_back(first_ok->rmse_curve[p].first);
        ss.curve_median.push_back(median_of(at_step));
        ss.curve_mad.push_back(mad_about_median(at_step));
      }
    }
  }
  return result;
}

// --- Persistence -------------------------------------------------------------

void write_trace_csv(const std::string& path, const RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("write_trace_csv: cannot open '" + path + "'");
  out << "# status: " << trace.status << "\n";
  out << "# multistep_greedy: " << (trace.multistep_greedy_used ? 1 : 0) << "\n";
  out << "# refinement_stalled: " << trace.refinement_stalled_count << "\n";
  out << "k,u,y,yhat,score,penalty,step_ms\n";
  for (const RunRecord& rec : trace.records) {
    out << rec.k << ',' << join_vec(rec.u) << ',' << join_vec(rec.y) << ','
        << join_vec(rec.yhat) << ',' << format_double(rec.score) << ','
        << format_double(rec.penalty) << ',' << format_double(rec.step_ms) << "\n";
  }
}

RunTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_trace_csv: cannot open '" + path + "'");
  RunTrace trace;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = line.substr(2, colon - 2);
      const std::string value = line.substr(colon + 1);
      if (key == "status") {
        trace.status = value.substr(value.find_first_not_of(' '));
      } else if (key == "multistep_greedy") {
        trace.multistep_greedy_used = std::stoi(value) != 0;
      } else if (key == "refinement_stalled") {
        trace.refinement_stalled_count = std::stoi(value);
      }
      continue;
    }
    if (line.rfind("k,", 0) == 0) continue;  // header
    std::istringstream ls(line);
    std::string field;
    RunRecord rec;
    std::getline(ls, field, ',');
    rec.k = std::stoi(field);
    std::getline(ls, field, ',');
    rec.u = split_vec(field);
    std::getline(ls, field, ',');
    rec.y = split_vec(field);
    std::getline(ls, field, ',');
    rec.yhat = split_vec(field);
    std::getline(ls, field, ',');
    rec.score = std::stod(field);
    std::getline(ls, field, ',');
    rec.penalty = std::stod(field);
    std::getline(ls, field, ',');
    rec.step_ms = std::stod(field);
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

void write_test_csv(const std::string& path, const TestSet& test) {
  std::ofstream out(path);
  if (!out) throw Error("write_test_csv: cannot open '" + path + "'");
  out << "u,y\n";
  for (int k = 0; k < test.size(); ++k) {
    out << join_vec(test.u.row(k).transpose()) << ',' << join_vec(test.y.row(k).transpose())
        << "\n";
  }
}

TestSet read_test_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_test_csv: cannot open '" + path + "'");
  std::vector<Vec> us, ys;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("u,", 0) == 0) continue;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    us.push_back(split_vec(field));
    std::getline(ls, field, ',');
    ys.push_back(split_vec(field));
  }
  TestSet test;
  if (us.empty()) return test;
  test.u.resize(static_cast<Eigen::Index>(us.size()), us.front().size());
  test.y.resize(static_cast<Eigen::Index>(ys.size()), ys.front().size());
  for (size_t k = 0; k < us.size(); ++k) {
    test.u.row(static_cast<Eigen::Index>(k)) = us[k].transpose();
    test.y.row(static_cast<Eigen::Index>(k)) = ys[k].transpose();
  }
  return test;
}

void write_run_meta(const std::string& path, const ExperimentConfig& cfg,
                    std::uint64_t seed, const RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("write_run_meta: cannot open '" + path + "'");
  out << "[run]\n";
  out << "plant = " << cfg.plant << "\n";
  out << "model = " << model_kind_name(cfg.model_kind) << "\n";
  out << "strategy = " << strategy_name(cfg.strategy) << "\n";
  out << "seed = " << seed << "\n";
  out << "status = " << trace.status << "\n";
  out << "n_init = " << cfg.n_init << "\n";
  out << "n_total = " << cfg.n_total << "\n";
  out << "horizon = " << cfg.horizon << "\n";
  out << "multistep_greedy = " << (trace.multistep_greedy_used ? 1 : 0) << "\n";
  out << "refinement_stalled = " << trace.refinement_stalled_count << "\n";
  out << "\n[ekf]\n";
  out << "p0 = " << format_double(cfg.p0) << "\n";
  out << "q_theta = " << format_double(cfg.q_theta) << "\n";
  out << "r = " << format_double(cfg.r) << "\n";
  out << "p0_x = " << format_double(cfg.p0_x) << "\n";
  out << "q_x = " << format_double(cfg.q_x) << "\n";
  const PlantSpec plant = plant_from_config(cfg);
  const Vec y_min = cfg.y_min_override.size() > 0 ? cfg.y_min_override : plant.y_min;
  const Vec y_max = cfg.y_max_override.size() > 0 ? cfg.y_max_override : plant.y_max;
  if (y_min.size() > 0) {
    out << "\n[constraints]\n";
    out << "y_min = ";
    for (Eigen::Index i = 0; i < y_min.size(); ++i) out << format_double(y_min[i]) << ' ';
    out << "\n";
    out << "y_max = ";
    for (Eigen::Index i = 0; i < y_max.size(); ++i) out << format_double(y_max[i]) << ' ';
    out << "\n";
  }
}

void write_metrics_report(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("write_metrics_report: cannot open '" + path + "'");
  out << "[aggregate]\n";
  out << "runs = " << report.runs.size() << "\n";
  out << "aborted = " << report.aborted_runs << "\n";
  out << "rmse_train_median = " << format_double(report.median.rmse_train) << "\n";
  out << "rmse_test_median = " << format_double(report.median.rmse_test) << "\n";
  out << "rmse_test_mad = " << format_double(report.mad.rmse_test) << "\n";
  out << "r2_test_median = " << format_double(report.median.r2_test) << "\n";
  out << "mcv_median = " << format_double(report.median.mcv) << "\n";
  double mcv_mean = 0.0;
  for (const RunMetrics& m : report.runs) mcv_mean += m.mcv;
  if (!report.runs.empty()) mcv_mean /= static_cast<double>(report.runs.size());
  out << "mcv_mean = " << format_double(mcv_mean) << "\n";
  for (size_t i = 0; i < report.runs.size(); ++i) {
    const RunMetrics& m = report.runs[i];
    out << "\n[run " << i << "]\n";
    out << "rmse_train = " << format_double(m.rmse_train) << "\n";
    out << "rmse_test = " << format_double(m.rmse_test) << "\n";
    out << "r2_test = " << format_double(m.r2_test) << "\n";
    out << "mcv = " << format_double(m.mcv) << "\n";
  }
}

void write_rmse_curve_csv(const std::string& path,
                          const std::vector<std::pair<int, double>>& curve) {
  std::ofstream out(path);
  if (!out) throw Error("write_rmse_curve_csv: cannot open '" + path + "'");
  out << "k,rmse\n";
  for (const auto& [k, v] : curve) out << k << ',' << format_double(v) << "\n";
}

std::vector<std::pair<int, double>> read_rmse_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_rmse_curve_csv: cannot open '" + path + "'");
  std::vector<std::pair<int, double>> curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("k,", 0) == 0) continue;
    const auto comma = line.find(',');
    curve.emplace_back(std::stoi(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return curve;
}

void write_run_dir(const std::string& dir, const ExperimentConfig& cfg,
                   std::uint64_t seed, const RunResult& result) {
  fs::create_directories(dir);
  write_trace_csv(dir + "/trace.csv", result.trace);
  result.checkpoint.save(dir + "/checkpoint.bin");
  write_run_meta(dir + "/run.meta", cfg, seed, result.trace);
  if (!result.rmse_curve.empty())
    write_rmse_curve_csv(dir + "/rmse_curve.csv", result.rmse_curve);
  MetricsReport single;
  single.runs = {result.metrics};
  single.median = result.metrics;
  write_metrics_report(dir + "/metrics.txt", single);
}

void write_sweep_dir(const std::string& dir, const ExperimentConfig& cfg,
                     const SweepResult& result) {
  fs::create_directories(dir);
  for (const StrategySweep& ss : result.strategies) {
    const std::string name = strategy_name(ss.strategy);
    for (size_t r = 0; r < ss.runs.size(); ++r) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.strategy = ss.strategy;
      write_run_dir(dir + "/" + name + "/run_" + std::to_string(r), run_cfg,
                    cfg.seed + static_cast<std::uint64_t>(r), ss.runs[r]);
    }
    write_metrics_report(dir + "/" + name + "_metrics.txt", ss.report);
    std::ofstream out(dir + "/curves_" + name + ".csv");
    out << "k,rmse_median,rmse_mad\n";
    for (size_t p = 0; p < ss.curve_steps.size(); ++p) {
      out << ss.curve_steps[p] << ',' << format_double(ss.curve_median[p]) << ','
          << format_double(ss.curve_mad[p]) << "\n";
    }
  }
}

void export_plot_csvs(const std::string& sweep_dir) {
  for (const auto& entry : fs::directory_iterator(sweep_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    std::vector<std::vector<std::pair<int, double>>> curves;
    for (const auto& run_entry : fs::directory_iterator(entry.path())) {
      const fs::path curve_path = run_entry.path() / "rmse_curve.csv";
      if (fs::exists(curve_path)) curves.push_back(read_rmse_curve_csv(curve_path.string()));
    }
    if (curves.empty()) continue;
    std::ofstream out(sweep_dir + "/curves_" + name + ".csv");
    out << "k,rmse_median,rmse_mad\n";
    for (size_t p = 0; p < curves.front().size(); ++p) {
      std::vector<double> at_step;
      for (const auto& c : curves)
        if (p < c.size()) at_step.push_back(c[p].second);
      out << curves.front()[p].first << ',' << format_double(median_of(at_step)) << ','
          << format_double(mad_about_median(at_step)) << "\n";
    }
  }
}

}  // namespace alsid
