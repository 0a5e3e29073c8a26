#pragma once

#include <vector>

#include "alsid/types.hpp"

namespace alsid {

/// Standard scaling transform v -> (v - mean) / std, fit once on the
/// initial data and frozen for the rest of the experiment.
struct Scaler {
  Vec mean;
  Vec std;

  /// Fit per-dimension mean and population standard deviation.
  /// Throws DegenerateSignal if any dimension has zero variance.
  static Scaler fit(const std::vector<Vec>& samples);

  Vec scale(const Vec& v) const;
  Vec unscale(const Vec& v) const;
  int size() const { return static_cast<int>(mean.size()); }
};

/// Autoregressive lag structure: n_a output lags, n_b input lags.
struct LagOrders {
  int n_a = 0;
  int n_b = 0;
  int n_u = 1;
  int n_y = 1;

  int feature_size() const { return n_a * n_y + n_b * n_u; }
  int depth() const { return n_a > n_b ? n_a : n_b; }
};

/// Feature vector [y_k ... y_{k-n_a+1}, u_k ... u_{k-n_b+1}], newest first,
/// in scaled units.
struct Regressor {
  Vec values;
  LagOrders orders;
};

/// Finite candidate input set, stored pre-scaled, one candidate per row.
struct InputPool {
  Mat candidates;

  int size() const { return static_cast<int>(candidates.rows()); }
  Vec candidate(int i) const { return candidates.row(i).transpose(); }

  /// Builds a pool from physical candidates and the frozen input scaler.
  /// Throws Error on duplicate candidates (exact equality after scaling).
  static InputPool from_physical(const Mat& physical, const Scaler& u_scaler);
};

// Growing store of scaled input/output samples plus the cached
// regressor/target pairs all IDW computations range over. Outputs lead
// inputs by at most one: y_k is measured before u_k is chosen.
//
// Pair columns are stored feature-per-column so that distance scans walk
// contiguous memory.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(LagOrders orders) : orders_(orders) {}

  const LagOrders& orders() const { return orders_; }

  void append_output(const Vec& y);
  void append_input(const Vec& u);
  /// Appends y then u (the measurement precedes the input decision).
  void append_sample(const Vec& u, const Vec& y);

  int num_inputs() const { return static_cast<int>(inputs_.size()); }
  int num_outputs() const { return static_cast<int>(outputs_.size()); }
  const Vec& input(int k) const { return inputs_[static_cast<size_t>(k)]; }
  const Vec& output(int k) const { return outputs_[static_cast<size_t>(k)]; }
  const std::vector<Vec>& inputs() const { return inputs_; }
  const std::vector<Vec>& outputs() const { return outputs_; }

  /// Regressor at time k with a hypothetical current input u (scaled).
  /// Requires outputs through k and inputs through k-1.
  Regressor build_regressor(int k, const Vec& u) const;

  /// True once the history is deep enough for a full regressor at time k.
  bool regressor_available(int k) const;

  /// Cached regressor x_k for the input actually applied at time k.
  Vec cached_regressor(int k) const;
  /// Earliest time index with a cached regressor (-1 if none yet).
  int first_regressor_time() const { return num_features_ > 0 ? first_feature_time_ : -1; }

  // Stored (x_{j-1}, y_j) pairs: features() column p pairs with targets()
  // column p, ordered by time.
  int num_pairs() const { return num_pairs_; }
  Eigen::Ref<const Mat> features() const { return feature_pair_cols_.leftCols(num_pairs_); }
  Eigen::Ref<const Mat> targets() const { return target_pair_cols_.leftCols(num_pairs_); }

 private:
  void cache_feature_for(int k);
  void cache_pair_for(int j);

  LagOrders orders_;
  std::vector<Vec> inputs_;
  std::vector<Vec> outputs_;

  // regressor_cols_ holds x_k for k = first_feature_time_ .., one per column.
  Mat regressor_cols_;
  int num_features_ = 0;
  int first_feature_time_ = -1;

  Mat feature_pair_cols_;
  Mat target_pair_cols_;
  int num_pairs_ = 0;
};

}  // namespace alsid
