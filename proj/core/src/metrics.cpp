#include "alsid/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace alsid {

double rmse(const Mat& y, const Mat& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols())
    throw DimensionMismatch("rmse: shape mismatch");
  if (y.rows() == 0) return 0.0;
  return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.rows()));
}

double r_squared(const Mat& y, const Mat& yhat) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols())
    throw DimensionMismatch("r_squared: shape mismatch");
  const Vec mean = y.colwise().mean();
  const double ss_tot = (y.rowwise() - mean.transpose()).squaredNorm();
  const double ss_res = (y - yhat).squaredNorm();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 100.0 : 0.0;
  return (1.0 - ss_res / ss_tot) * 100.0;
}

double mean_constraint_violation(const RunTrace& trace, const Vec& y_min, const Vec& y_max,
                                 int n_init) {
  double total = 0.0;
  long count = 0;
  for (const RunRecord& rec : trace.records) {
    if (rec.k < n_init) continue;
    for (Eigen::Index i = 0; i < rec.y.size(); ++i) {
      total += std::max({0.0, rec.y[i] - y_max[i], y_min[i] - rec.y[i]});
    }
    ++count;
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mad_about_median(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double med = median_of(values);
  double total = 0.0;
  for (double v : values) total += std::abs(v - med);
  return total / static_cast<double>(values.size());
}

MetricsReport aggregate_metrics(const std::vector<RunMetrics>& runs, int aborted) {
  MetricsReport report;
  report.runs = runs;
  report.aborted_runs = aborted;
  std::vector<double> train, test, r2, mcv;
  for (const RunMetrics& m : runs) {
    train.push_back(m.rmse_train);
    test.push_back(m.rmse_test);
    r2.push_back(m.r2_test);
    mcv.push_back(m.mcv);
  }
  report.median.rmse_train = median_of(train);
  report.median.rmse_test = median_of(test);
  report.median.r2_test = median_of(r2);
  report.median.mcv = median_of(mcv);
  report.mad.rmse_train = mad_about_median(train);
  report.mad.rmse_test = mad_about_median(test);
  report.mad.r2_test = mad_about_median(r2);
  report.mad.mcv = mad_about_median(mcv);
  return report;
}

}  // namespace alsid
