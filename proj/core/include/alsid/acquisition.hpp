#pragma once

#include <functional>
#include <string>
#include <vector>

#include "alsid/models.hpp"
#include "alsid/signals.hpp"
#include "alsid/types.hpp"

namespace alsid {

enum class IdwKernel {
  InverseSquare,     // w(d) = 1/d^2
  ExpInverseSquare,  // w(d) = exp(-d^2)/d^2, faster decay far from samples
};

/// Squared distance below which a point counts as an exact hit on a stored
/// sample (1e-12 in scaled distance units).
inline constexpr double kExactHitDistSq = 1e-24;

double idw_weight(IdwKernel kernel, double dist_sq);

/// IDW coefficients v_0..v_{P-1} over stored points (one point per column):
/// nonnegative, sum to 1, with the exact-hit rule applied on (near-)equality.
Vec idw_coeffs(const Eigen::Ref<const Mat>& points, const Vec& x, IdwKernel kernel);

/// IDW exploration in [0, 1): zero exactly on stored points, approaching one
/// far away from all of them.
double idw_exploration(const Eigen::Ref<const Mat>& points, const Vec& x, IdwKernel kernel);

/// IDW variance with precomputed squared residuals per stored point.
double idw_variance_cached(const Eigen::Ref<const Mat>& points, const Vec& residual_sq,
                           const Vec& x, IdwKernel kernel);

/// IDW variance proxy s^2(x) over the dataset's stored pairs under the given
/// one-step model.
double idw_variance(const Dataset& ds, const NarxModel& model, const Vec& x,
                    IdwKernel kernel);

enum class PenaltyMode { None, Plain, Shrunk };

struct PenaltyConfig {
  PenaltyMode mode = PenaltyMode::None;
  Vec y_min;  // scaled units
  Vec y_max;
  double rho = 0.0;
  double alpha_quantile = 0.90;
  double beta_cap = 1.0 / 3.0;

  bool active() const { return mode != PenaltyMode::None && rho > 0.0; }
};

/// rho * sum_i [max(yhat_i - y_max_i, 0) + max(y_min_i - yhat_i, 0)].
double penalty_plain(const PenaltyConfig& cfg, const Vec& yhat);

/// Plain penalty with bounds tightened by min(kappa_s, beta * (y_max - y_min))
/// per output dimension; kappa_s = kappa_alpha * s(x).
double penalty_shrunk(const PenaltyConfig& cfg, const Vec& yhat, double kappa_s);

enum class Strategy { Passive, Ideal, Gsx, Igs, Qbc };

Strategy strategy_from_string(const std::string& s);
std::string strategy_name(Strategy s);

// Everything one selection step needs. Stored memory uses one point per
// column: NARX mode pairs (x_{j-1}, y_j); state-space mode triples
// (q_i, y_{i+1}, x_{i+1|k}) with next_states non-empty.
struct AcquisitionContext {
  IdwKernel kernel = IdwKernel::InverseSquare;
  double delta = 0.0;
  double alpha_state = 0.0;  // state/output uncertainty trade-off (SS mode)
  int horizon = 1;
  long enumeration_budget = 100000;
  int threads = 1;
  PenaltyConfig penalty;

  const InputPool* pool = nullptr;

  Mat feats;        // d x P
  Mat targets;      // n_y x P
  Mat next_states;  // n_x x P; empty in NARX mode

  // Candidate assembly: feature = feature_template with the candidate input
  // written at [u_offset, u_offset + n_u).
  Vec feature_template;
  int u_offset = 0;
  int n_u = 1;
  LagOrders lags;  // NARX multi-step feature shifting

  // Model hooks. NARX mode: predict(x). SS mode: predict_state(q) and
  // output_of_state(x); the one-step output prediction is their composition.
  std::function<Vec(const Vec&)> predict;
  std::function<Mat(const Eigen::Ref<const Mat>&)> predict_cols;  // optional batch
  std::function<Vec(const Vec&)> predict_state;
  std::function<Vec(const Vec&)> output_of_state;
  std::vector<std::function<Vec(const Vec&)>> committee;

  // Trajectory freshness guard (SS mode).
  int trajectory_age = 0;
  int max_trajectory_age = -1;  // negative: no limit

  bool state_space_mode() const { return next_states.cols() > 0 || predict_state != nullptr; }
  int num_stored() const { return static_cast<int>(feats.cols()); }
  Vec make_feature(const Vec& u) const;
  Vec predicted_output(const Vec& feat) const;
};

/// Upper alpha-quantile of leave-one-out error ratios |CV_i| / s_{-i}(x_i)
/// over the context's stored points. Ratios whose denominator falls below
/// 1e-12 are excluded; throws InsufficientData with fewer than 2 usable
/// ratios.
double kappa_alpha(const AcquisitionContext& ctx);

/// NARX convenience overload over a dataset.
double kappa_alpha(const Dataset& ds, const NarxModel& model, IdwKernel kernel,
                   double alpha_quantile);

struct Selection {
  int index = -1;             // chosen candidate (first move)
  std::vector<int> sequence;  // chosen indices, length = horizon
  double score = 0.0;         // objective value at the argmax
  double penalty = 0.0;       // penalty term at the first move
  bool greedy_fallback = false;
};

/// Per-sequence score decomposition for the multi-step objective:
/// total = s2_first + sum_j (delta * z[j] - p[j]).
struct MultistepScore {
  double s2_first = 0.0;
  Vec z;
  Vec p;
  double total = 0.0;
};

MultistepScore score_sequence(const AcquisitionContext& ctx, const std::vector<int>& seq);

Selection select_ideal(const AcquisitionContext& ctx);
Selection select_gsx(const AcquisitionContext& ctx);
Selection select_igs(const AcquisitionContext& ctx);
Selection select_qbc(const AcquisitionContext& ctx);
Selection select_ideal_multistep(const AcquisitionContext& ctx);

/// State-space selection: dispatches the strategy over q = [x_{k|k}', u']'
/// feature space. Throws StaleTrajectory when the context's trajectory age
/// exceeds the configured limit.
Selection select_ss(const AcquisitionContext& ctx, Strategy strategy);

/// Generic dispatch (NARX or SS mode from the context).
Selection select(const AcquisitionContext& ctx, Strategy strategy);

}  // namespace alsid
