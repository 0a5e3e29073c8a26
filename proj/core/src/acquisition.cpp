#include "alsid/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace alsid {

namespace {

constexpr double kTwoOverPi = 0.63661977236758134307553505349;

double quantile_upper(std::vector<double>& values, double alpha) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto idx = static_cast<long>(std::ceil(alpha * n)) - 1;
  idx = std::max(0L, std::min(idx, static_cast<long>(values.size()) - 1));
  return values[static_cast<size_t>(idx)];
}

}  // namespace

double idw_weight(IdwKernel kernel, double dist_sq) {
  if (kernel == IdwKernel::InverseSquare) return 1.0 / dist_sq;
  return std::exp(-dist_sq) / dist_sq;
}

Vec idw_coeffs(const Eigen::Ref<const Mat>& points, const Vec& x, IdwKernel kernel) {
  const auto P = points.cols();
  if (P < 1) throw InsufficientData("idw_coeffs: no stored points");
  Vec v = Vec::Zero(P);
  for (Eigen::Index j = 0; j < P; ++j) {
    if ((x - points.col(j)).squaredNorm() < kExactHitDistSq) {
      v[j] = 1.0;
      return v;
    }
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < P; ++j) {
    v[j] = idw_weight(kernel, (x - points.col(j)).squaredNorm());
    total += v[j];
  }
  v /= total;
  return v;
}

double idw_exploration(const Eigen::Ref<const Mat>& points, const Vec& x,
                       IdwKernel kernel) {
  const auto P = points.cols();
  if (P < 1) throw InsufficientData("idw_exploration: no stored points");
  double total = 0.0;
  for (Eigen::Index j = 0; j < P; ++j) {
    const double d2 = (x - points.col(j)).squaredNorm();
    if (d2 < kExactHitDistSq) return 0.0;
    total += idw_weight(kernel, d2);
  }
  return kTwoOverPi * std::atan(1.0 / total);
}

double idw_variance_cached(const Eigen::Ref<const Mat>& points, const Vec& residual_sq,
                           const Vec& x, IdwKernel kernel) {
  const auto P = points.cols();
  if (P < 1) throw InsufficientData("idw_variance: no stored points");
  double total = 0.0;
  double weighted = 0.0;
  for (Eigen::Index j = 0; j < P; ++j) {
    const double d2 = (x - points.col(j)).squaredNorm();
    if (d2 < kExactHitDistSq) return residual_sq[j];
    const double w = idw_weight(kernel, d2);
    total += w;
    weighted += w * residual_sq[j];
  }
  return weighted / total;
}

double idw_variance(const Dataset& ds, const NarxModel& model, const Vec& x,
                    IdwKernel kernel) {
  const auto F = ds.features();
  const Mat preds = model.predict_cols(F);
  Vec rsq(F.cols());
  for (Eigen::Index j = 0; j < F.cols(); ++j)
    rsq[j] = (ds.targets().col(j) - preds.col(j)).squaredNorm();
  return idw_variance_cached(F, rsq, x, kernel);
}

double penalty_plain(const PenaltyConfig& cfg, const Vec& yhat) {
  if (!cfg.active()) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < yhat.size(); ++i) {
    total += std::max(yhat[i] - cfg.y_max[i], 0.0);
    total += std::max(cfg.y_min[i] - yhat[i], 0.0);
  }
  return cfg.rho * total;
}

double penalty_shrunk(const PenaltyConfig& cfg, const Vec& yhat, double kappa_s) {
  if (!cfg.active()) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < yhat.size(); ++i) {
    const double shrink =
        std::min(kappa_s, cfg.beta_cap * (cfg.y_max[i] - cfg.y_min[i]));
    total += std::max(yhat[i] - cfg.y_max[i] + shrink, 0.0);
    total += std::max(cfg.y_min[i] - yhat[i] + shrink, 0.0);
  }
  return cfg.rho * total;
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "passive") return Strategy::Passive;
  if (s == "ideal") return Strategy::Ideal;
  if (s == "gsx") return Strategy::Gsx;
  if (s == "igs") return Strategy::Igs;
  if (s == "qbc") return Strategy::Qbc;
  throw Error("unknown strategy: " + s);
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Passive: return "passive";
    case Strategy::Ideal: return "ideal";
    case Strategy::Gsx: return "gsx";
    case Strategy::Igs: return "igs";
    case Strategy::Qbc: return "qbc";
  }
  return "?";
}

Vec AcquisitionContext::make_feature(const Vec& u) const {
  Vec f = feature_template;
  f.segment(u_offset, n_u) = u;
  return f;
}

Vec AcquisitionContext::predicted_output(const Vec& feat) const {
  if (predict) return predict(feat);
  if (predict_state && output_of_state) return output_of_state(predict_state(feat));
  if (!committee.empty()) {
    Vec mean = committee.front()(feat);
    for (size_t j = 1; j < committee.size(); ++j) mean += committee[j](feat);
    return mean / static_cast<double>(committee.size());
  }
  throw Error("AcquisitionContext: no prediction hook configured");
}

namespace {

struct S2Z {
  double s2 = 0.0;
  double z = 0.0;
};

// Per-selection-step scorer: caches model residuals over the stored pairs
// and the kappa_alpha quantile when the shrunk penalty is on.
class Evaluator {
 public:
  Evaluator(const AcquisitionContext& ctx, bool need_residuals)
      : ctx_(ctx), ss_(ctx.state_space_mode()) {
    if (ctx.num_stored() < 1) throw InsufficientData("acquisition: empty sample memory");
    if (need_residuals && !ss_) {
      const Mat preds = ctx.predict_cols ? ctx.predict_cols(ctx.feats)
                                         : predict_loop(ctx);
      rsq_.resize(ctx.feats.cols());
      for (Eigen::Index j = 0; j < ctx.feats.cols(); ++j)
        rsq_[j] = (ctx.targets.col(j) - preds.col(j)).squaredNorm();
    }
    if (ctx.penalty.active() && ctx.penalty.mode == PenaltyMode::Shrunk)
      kappa_ = kappa_alpha(ctx);
  }

  S2Z s2z(const Vec& feat) const { return ss_ ? s2z_ss(feat) : s2z_narx(feat); }

  double exploration(const Vec& feat) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < ctx_.feats.cols(); ++j) {
      const double d2 = (feat - ctx_.feats.col(j)).squaredNorm();
      if (d2 < kExactHitDistSq) return 0.0;
      total += idw_weight(ctx_.kernel, d2);
    }
    return kTwoOverPi * std::atan(1.0 / total);
  }

  double min_dist_sq(const Vec& feat) const {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < ctx_.feats.cols(); ++j)
      best = std::min(best, (feat - ctx_.feats.col(j)).squaredNorm());
    return best;
  }

  // Minimum squared distance in the prediction space: outputs for NARX,
  // concatenated (output, next state) for SS.
  double min_pred_dist_sq(const Vec& yhat, const Vec* x_plus) const {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < ctx_.targets.cols(); ++j) {
      double d2 = (yhat - ctx_.targets.col(j)).squaredNorm();
      if (x_plus) d2 += (*x_plus - ctx_.next_states.col(j)).squaredNorm();
      best = std::min(best, d2);
    }
    return best;
  }

  double penalty_given(const Vec& yhat, double s) const {
    if (!ctx_.penalty.active()) return 0.0;
    if (ctx_.penalty.mode == PenaltyMode::Plain) return penalty_plain(ctx_.penalty, yhat);
    return penalty_shrunk(ctx_.penalty, yhat, kappa_ * s);
  }

  double penalty_at(const Vec& feat, double s) const {
    if (!ctx_.penalty.active()) return 0.0;
    return penalty_given(ctx_.predicted_output(feat), s);
  }

 private:
  static Mat predict_loop(const AcquisitionContext& ctx) {
    Mat preds(ctx.targets.rows(), ctx.feats.cols());
    for (Eigen::Index j = 0; j < ctx.feats.cols(); ++j)
      preds.col(j) = ctx.predict(ctx.feats.col(j));
    return preds;
  }

  S2Z s2z_narx(const Vec& feat) const {
    double total = 0.0;
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < ctx_.feats.cols(); ++j) {
      const double d2 = (feat - ctx_.feats.col(j)).squaredNorm();
      if (d2 < kExactHitDistSq) return {rsq_[j], 0.0};
      const double w = idw_weight(ctx_.kernel, d2);
      total += w;
      weighted += w * rsq_[j];
    }
    return {weighted / total, kTwoOverPi * std::atan(1.0 / total)};
  }

  S2Z s2z_ss(const Vec& feat) const {
    const Vec x_plus = ctx_.predict_state(feat);
    const Vec yhat = ctx_.output_of_state(x_plus);
    double total = 0.0;
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < ctx_.feats.cols(); ++j) {
      const double d2 = (feat - ctx_.feats.col(j)).squaredNorm();
      const double r = (yhat - ctx_.targets.col(j)).squaredNorm() +
                       ctx_.alpha_state * (x_plus - ctx_.next_states.col(j)).squaredNorm();
      if (d2 < kExactHitDistSq) return {r, 0.0};
      const double w = idw_weight(ctx_.kernel, d2);
      total += w;
      weighted += w * r;
    }
    return {weighted / total, kTwoOverPi * std::atan(1.0 / total)};
  }

  const AcquisitionContext& ctx_;
  bool ss_;
  Vec rsq_;
  double kappa_ = 0.0;
};

struct Scored {
  double score = 0.0;
  double penalty = 0.0;
};

// Exact argmax over the pool; ties go to the lowest index. With threads > 1
// the pool is scored in contiguous chunks and reduced in chunk order, so the
// chosen index matches the serial scan exactly.
template <typename F>
Selection argmax_pool(const AcquisitionContext& ctx, F&& eval) {
  if (!ctx.pool || ctx.pool->size() < 1) throw Error("acquisition: empty pool");
  const int M = ctx.pool->size();

  auto scan = [&](int lo, int hi, int& best, Scored& best_scored) {
    best = lo;
    best_scored = eval(lo);
    for (int i = lo + 1; i < hi; ++i) {
      const Scored s = eval(i);
      if (s.score > best_scored.score) {
        best = i;
        best_scored = s;
      }
    }
  };

  int best_index = 0;
  Scored best{};
  const int threads = std::min(ctx.threads, M);
  if (threads <= 1 || M < 2 * threads) {
    scan(0, M, best_index, best);
  } else {
    std::vector<int> idx(static_cast<size_t>(threads));
    std::vector<Scored> sc(static_cast<size_t>(threads));
    std::vector<std::thread> pool_threads;
    const int chunk = (M + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * chunk;
      const int hi = std::min(M, lo + chunk);
      pool_threads.emplace_back([&, t, lo, hi] { scan(lo, hi, idx[t], sc[t]); });
    }
    for (auto& th : pool_threads) th.join();
    best_index = idx[0];
    best = sc[0];
    for (int t = 1; t < threads; ++t) {
      if (sc[t].score > best.score) {
        best_index = idx[t];
        best = sc[t];
      }
    }
  }

  Selection sel;
  sel.index = best_index;
  sel.sequence = {best_index};
  sel.score = best.score;
  sel.penalty = best.penalty;
  return sel;
}

Vec advance_feature(const AcquisitionContext& ctx, const Vec& feat, const Vec& u_next) {
  if (ctx.state_space_mode()) {
    Vec g(feat.size());
    g.head(ctx.u_offset) = ctx.predict_state(feat);
    g.segment(ctx.u_offset, ctx.n_u) = u_next;
    return g;
  }
  const LagOrders& lo = ctx.lags;
  Vec g = Vec::Zero(feat.size());
  if (lo.n_a > 0) {
    g.head(lo.n_y) = ctx.predicted_output(feat);
    if (lo.n_a > 1)
      g.segment(lo.n_y, (lo.n_a - 1) * lo.n_y) = feat.head((lo.n_a - 1) * lo.n_y);
  }
  const int uo = lo.n_a * lo.n_y;
  if (lo.n_b > 0) {
    g.segment(uo, lo.n_u) = u_next;
    if (lo.n_b > 1)
      g.segment(uo + lo.n_u, (lo.n_b - 1) * lo.n_u) =
          feat.segment(uo, (lo.n_b - 1) * lo.n_u);
  }
  return g;
}

MultistepScore score_sequence_with(const AcquisitionContext& ctx, const Evaluator& ev,
                                   const std::vector<int>& seq) {
  const int L = static_cast<int>(seq.size());
  MultistepScore ms;
  ms.z.resize(L);
  ms.p.resize(L);
  Vec feat = ctx.make_feature(ctx.pool->candidate(seq[0]));
  const S2Z first = ev.s2z(feat);
  ms.s2_first = first.s2;
  ms.z[0] = first.z;
  ms.p[0] = ev.penalty_at(feat, std::sqrt(first.s2));
  for (int j = 1; j < L; ++j) {
    feat = advance_feature(ctx, feat, ctx.pool->candidate(seq[j]));
    ms.z[j] = ev.exploration(feat);
    // Predicted future samples carry zero IDW variance, so the shrunk bound
    // collapses to the plain one at j > 0.
    ms.p[j] = ev.penalty_at(feat, 0.0);
  }
  ms.total = ms.s2_first;
  for (int j = 0; j < L; ++j) ms.total += ctx.delta * ms.z[j] - ms.p[j];
  return ms;
}

}  // namespace

MultistepScore score_sequence(const AcquisitionContext& ctx, const std::vector<int>& seq) {
  Evaluator ev(ctx, true);
  return score_sequence_with(ctx, ev, seq);
}

Selection select_ideal(const AcquisitionContext& ctx) {
  Evaluator ev(ctx, true);
  return argmax_pool(ctx, [&](int i) {
    const Vec feat = ctx.make_feature(ctx.pool->candidate(i));
    const S2Z sz = ev.s2z(feat);
    const double p = ev.penalty_at(feat, std::sqrt(sz.s2));
    return Scored{sz.s2 + ctx.delta * sz.z - p, p};
  });
}

Selection select_gsx(const AcquisitionContext& ctx) {
  const bool shrunk = ctx.penalty.active() && ctx.penalty.mode == PenaltyMode::Shrunk;
  Evaluator ev(ctx, shrunk);
  return argmax_pool(ctx, [&](int i) {
    const Vec feat = ctx.make_feature(ctx.pool->candidate(i));
    const double dx = ev.min_dist_sq(feat);
    const double s = shrunk ? std::sqrt(ev.s2z(feat).s2) : 0.0;
    const double p = ev.penalty_at(feat, s);
    return Scored{dx - p, p};
  });
}

Selection select_igs(const AcquisitionContext& ctx) {
  const bool ss = ctx.state_space_mode();
  const bool shrunk = ctx.penalty.active() && ctx.penalty.mode == PenaltyMode::Shrunk;
  Evaluator ev(ctx, shrunk);
  return argmax_pool(ctx, [&](int i) {
    const Vec feat = ctx.make_feature(ctx.pool->candidate(i));
    const double dx = ev.min_dist_sq(feat);
    double dy = 0.0;
    Vec yhat;
    if (ss) {
      const Vec x_plus = ctx.predict_state(feat);
      yhat = ctx.output_of_state(x_plus);
      dy = ev.min_pred_dist_sq(yhat, &x_plus);
    } else {
      yhat = ctx.predicted_output(feat);
      dy = ev.min_pred_dist_sq(yhat, nullptr);
    }
    const double s = shrunk ? std::sqrt(ev.s2z(feat).s2) : 0.0;
    const double p = ev.penalty_given(yhat, s);
    return Scored{dx * dy - p, p};
  });
}

Selection select_qbc(const AcquisitionContext& ctx) {
  if (ctx.committee.size() < 2) throw Error("select_qbc: committee needs K_QBC >= 2");
  const bool shrunk = ctx.penalty.active() && ctx.penalty.mode == PenaltyMode::Shrunk;
  Evaluator ev(ctx, shrunk);
  const auto K = ctx.committee.size();
  return argmax_pool(ctx, [&](int i) {
    const Vec feat = ctx.make_feature(ctx.pool->candidate(i));
    std::vector<Vec> preds(K);
    Vec mean = Vec::Zero(ctx.targets.rows());
    for (size_t j = 0; j < K; ++j) {
      preds[j] = ctx.committee[j](feat);
      mean += preds[j];
    }
    mean /= static_cast<double>(K);
    double variance = 0.0;
    for (size_t j = 0; j < K; ++j) variance += (preds[j] - mean).squaredNorm();
    const double s = shrunk ? std::sqrt(ev.s2z(feat).s2) : 0.0;
    const double p = ev.penalty_given(mean, s);
    return Scored{variance - p, p};
  });
}

Selection select_ideal_multistep(const AcquisitionContext& ctx) {
  const int L = ctx.horizon;
  if (L < 1) throw Error("select_ideal_multistep: horizon must be >= 1");
  if (L == 1) return select_ideal(ctx);

  const int M = ctx.pool->size();
  Evaluator ev(ctx, true);

  double total_sequences = 1.0;
  for (int j = 0; j < L; ++j) total_sequences *= static_cast<double>(M);

  Selection best;
  if (total_sequences <= static_cast<double>(ctx.enumeration_budget)) {
    // Exhaustive enumeration in lexicographic order; strict improvement keeps
    // the lexicographically-lowest tie.
    std::vector<int> seq(static_cast<size_t>(L), 0);
    bool first = true;
    while (true) {
      const MultistepScore ms = score_sequence_with(ctx, ev, seq);
      if (first || ms.total > best.score) {
        best.sequence = seq;
        best.score = ms.total;
        best.penalty = ms.p[0];
        first = false;
      }
      int pos = L - 1;
      while (pos >= 0 && seq[static_cast<size_t>(pos)] == M - 1) {
        seq[static_cast<size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
      ++seq[static_cast<size_t>(pos)];
    }
  } else {
    // Stage-wise greedy search: commit the best first move, then extend one
    // step at a time on exploration-minus-penalty alone.
    best = select_ideal(ctx);
    best.greedy_fallback = true;
    best.sequence.resize(static_cast<size_t>(L));
    Vec feat = ctx.make_feature(ctx.pool->candidate(best.index));
    double total = best.score;
    for (int j = 1; j < L; ++j) {
      int arg = 0;
      double arg_score = 0.0;
      Vec arg_feat;
      for (int i = 0; i < M; ++i) {
        const Vec cand = advance_feature(ctx, feat, ctx.pool->candidate(i));
        const double sc = ctx.delta * ev.exploration(cand) - ev.penalty_at(cand, 0.0);
        if (i == 0 || sc > arg_score) {
          arg = i;
          arg_score = sc;
          arg_feat = cand;
        }
      }
      best.sequence[static_cast<size_t>(j)] = arg;
      total += arg_score;
      feat = arg_feat;
    }
    best.score = total;
  }
  best.index = best.sequence[0];
  return best;
}

Selection select_ss(const AcquisitionContext& ctx, Strategy strategy) {
  if (ctx.max_trajectory_age >= 0 && ctx.trajectory_age > ctx.max_trajectory_age)
    throw StaleTrajectory("select_ss: reconstructed trajectory is stale");
  switch (strategy) {
    case Strategy::Ideal:
      return ctx.horizon > 1 ? select_ideal_multistep(ctx) : select_ideal(ctx);
    case Strategy::Gsx: return select_gsx(ctx);
    case Strategy::Igs: return select_igs(ctx);
    case Strategy::Qbc: return select_qbc(ctx);
    case Strategy::Passive: break;
  }
  throw Error("select_ss: passive sampling is not an acquisition strategy");
}

Selection select(const AcquisitionContext& ctx, Strategy strategy) {
  if (ctx.state_space_mode()) return select_ss(ctx, strategy);
  switch (strategy) {
    case Strategy::Ideal:
      return ctx.horizon > 1 ? select_ideal_multistep(ctx) : select_ideal(ctx);
    case Strategy::Gsx: return select_gsx(ctx);
    case Strategy::Igs: return select_igs(ctx);
    case Strategy::Qbc: return select_qbc(ctx);
    case Strategy::Passive: break;
  }
  throw Error("select: passive sampling is not an acquisition strategy");
}

double kappa_alpha(const AcquisitionContext& ctx) {
  const auto P = ctx.feats.cols();
  if (P < 2) throw InsufficientData("kappa_alpha: needs at least 2 stored samples");
  const bool ss = ctx.state_space_mode();

  std::vector<double> ratios;
  ratios.reserve(static_cast<size_t>(P));
  for (Eigen::Index i = 0; i < P; ++i) {
    const Vec feat = ctx.feats.col(i);
    Vec x_plus;
    Vec yhat;
    if (ss) {
      x_plus = ctx.predict_state(feat);
      yhat = ctx.output_of_state(x_plus);
    } else {
      yhat = ctx.predicted_output(feat);
    }
    const double cv = (ctx.targets.col(i) - yhat).norm();

    // Leave-one-out IDW variance at the stored point itself.
    double total = 0.0;
    double weighted = 0.0;
    double s2 = -1.0;
    for (Eigen::Index j = 0; j < P; ++j) {
      if (j == i) continue;
      double r = (ctx.targets.col(j) - yhat).squaredNorm();
      if (ss) r += ctx.alpha_state * (ctx.next_states.col(j) - x_plus).squaredNorm();
      const double d2 = (feat - ctx.feats.col(j)).squaredNorm();
      if (d2 < kExactHitDistSq) {
        s2 = r;
        break;
      }
      const double w = idw_weight(ctx.kernel, d2);
      total += w;
      weighted += w * r;
    }
    if (s2 < 0.0) s2 = weighted / total;
    const double denom = std::sqrt(s2);
    if (denom < 1e-12) continue;
    ratios.push_back(cv / denom);
  }
  if (ratios.size() < 2)
    throw InsufficientData("kappa_alpha: fewer than 2 usable leave-one-out ratios");
  return quantile_upper(ratios, ctx.penalty.alpha_quantile);
}

double kappa_alpha(const Dataset& ds, const NarxModel& model, IdwKernel kernel,
                   double alpha_quantile) {
  AcquisitionContext ctx;
  ctx.kernel = kernel;
  ctx.penalty.alpha_quantile = alpha_quantile;
  ctx.feats = ds.features();
  ctx.targets = ds.targets();
  ctx.predict = [&model](const Vec& x) { return model.predict(x); };
  return kappa_alpha(ctx);
}

}  // namespace alsid
