#pragma once

#include <string>
#include <vector>

#include "alsid/types.hpp"

namespace alsid {

/// One trace record per designed input: the measurement y_k precedes the
/// chosen input u_k; yhat is the one-step prediction of y_k made before the
/// filter update (NaN while no model exists). All values in physical units
/// except score/penalty, which live in scaled space.
struct RunRecord {
  int k = 0;
  Vec u;
  Vec y;
  Vec yhat;
  double score = 0.0;
  double penalty = 0.0;
  double step_ms = 0.0;  // wall time spent selecting u_k
};

struct RunTrace {
  std::vector<RunRecord> records;
  std::string status = "ok";  // "ok" or "aborted: <reason>"
  bool multistep_greedy_used = false;
  int refinement_stalled_count = 0;

  bool ok() const { return status == "ok"; }
};

struct RunMetrics {
  double rmse_train = 0.0;
  double rmse_test = 0.0;
  double r2_test = 0.0;  // percent
  double mcv = 0.0;
};

struct MetricsReport {
  std::vector<RunMetrics> runs;
  RunMetrics median;
  RunMetrics mad;  // mean absolute deviation around the median
  int aborted_runs = 0;
};

double rmse(const Mat& y, const Mat& yhat);
/// Coefficient of determination in percent.
double r_squared(const Mat& y, const Mat& yhat);

/// Mean constraint violation over trace records with k in [n_init, N-1],
/// physical units.
double mean_constraint_violation(const RunTrace& trace, const Vec& y_min,
                                 const Vec& y_max, int n_init);

double median_of(std::vector<double> values);
double mad_about_median(const std::vector<double>& values);

MetricsReport aggregate_metrics(const std::vector<RunMetrics>& runs, int aborted);

}  // namespace alsid
