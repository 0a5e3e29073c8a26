#include "alsid/signals.hpp"

#include <cmath>

namespace alsid {

Scaler Scaler::fit(const std::vector<Vec>& samples) {
  if (samples.size() < 2) throw InsufficientData("Scaler::fit needs at least 2 samples");
  const auto n = static_cast<Eigen::Index>(samples.front().size());
  Vec mean = Vec::Zero(n);
  for (const Vec& s : samples) {
    if (s.size() != n) throw DimensionMismatch("Scaler::fit: inconsistent sample dimension");
    mean += s;
  }
  mean /= static_cast<double>(samples.size());
  Vec var = Vec::Zero(n);
  for (const Vec& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size());  // population convention
  for (Eigen::Index i = 0; i < n; ++i) {
    if (var[i] <= 0.0) {
      throw DegenerateSignal("Scaler::fit: channel " + std::to_string(i) +
                             " has zero variance; widen the initial excitation");
    }
  }
  Scaler sc;
  sc.mean = std::move(mean);
  sc.std = var.cwiseSqrt();
  return sc;
}

Vec Scaler::scale(const Vec& v) const {
  if (v.size() != mean.size()) throw DimensionMismatch("Scaler::scale: dimension mismatch");
  return (v - mean).cwiseQuotient(std);
}

Vec Scaler::unscale(const Vec& v) const {
  if (v.size() != mean.size()) throw DimensionMismatch("Scaler::unscale: dimension mismatch");
  return v.cwiseProduct(std) + mean;
}

InputPool InputPool::from_physical(const Mat& physical, const Scaler& u_scaler) {
  if (physical.rows() < 1) throw Error("InputPool: empty pool");
  InputPool pool;
  pool.candidates.resize(physical.rows(), physical.cols());
  for (Eigen::Index i = 0; i < physical.rows(); ++i) {
    pool.candidates.row(i) = u_scaler.scale(physical.row(i).transpose()).transpose();
  }
  for (Eigen::Index i = 0; i < pool.candidates.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < pool.candidates.rows(); ++j) {
      if (pool.candidates.row(i) == pool.candidates.row(j)) {
        throw Error("InputPool: duplicate candidate after scaling");
      }
    }
  }
  return pool;
}

void Dataset::append_output(const Vec& y) {
  if (num_outputs() != num_inputs())
    throw Error("Dataset: outputs and inputs must alternate (y_k before u_k)");
  if (orders_.n_y > 0 && y.size() != orders_.n_y)
    throw DimensionMismatch("Dataset::append_output: wrong output dimension");
  outputs_.push_back(y);
  cache_pair_for(num_outputs() - 1);
}

void Dataset::append_input(const Vec& u) {
  if (num_outputs() != num_inputs() + 1)
    throw Error("Dataset: input u_k must follow output y_k");
  if (orders_.n_u > 0 && u.size() != orders_.n_u)
    throw DimensionMismatch("Dataset::append_input: wrong input dimension");
  inputs_.push_back(u);
  cache_feature_for(num_inputs() - 1);
}

void Dataset::append_sample(const Vec& u, const Vec& y) {
  append_output(y);
  append_input(u);
}

bool Dataset::regressor_available(int k) const {
  if (orders_.feature_size() == 0) return false;
  if (k < 0 || k >= num_outputs()) return false;
  if (orders_.n_a > 0 && k - orders_.n_a + 1 < 0) return false;
  // u_{k-1} .. u_{k-n_b+1} must exist (the current slot is the candidate).
  if (orders_.n_b > 1 && (k - orders_.n_b + 1 < 0 || k - 1 >= num_inputs())) return false;
  return true;
}

Regressor Dataset::build_regressor(int k, const Vec& u) const {
  if (!regressor_available(k))
    throw InsufficientHistory("Dataset::build_regressor: history depth < max(n_a, n_b)");
  if (u.size() != orders_.n_u)
    throw DimensionMismatch("Dataset::build_regressor: wrong input dimension");
  Regressor r;
  r.orders = orders_;
  r.values.resize(orders_.feature_size());
  Eigen::Index pos = 0;
  for (int i = 0; i < orders_.n_a; ++i) {
    r.values.segment(pos, orders_.n_y) = outputs_[static_cast<size_t>(k - i)];
    pos += orders_.n_y;
  }
  if (orders_.n_b > 0) {
    r.values.segment(pos, orders_.n_u) = u;
    pos += orders_.n_u;
    for (int i = 1; i < orders_.n_b; ++i) {
      r.values.segment(pos, orders_.n_u) = inputs_[static_cast<size_t>(k - i)];
      pos += orders_.n_u;
    }
  }
  return r;
}

Vec Dataset::cached_regressor(int k) const {
  const int col = k - first_feature_time_;
  if (num_features_ == 0 || col < 0 || col >= num_features_)
    throw InsufficientHistory("Dataset::cached_regressor: no cached regressor at k");
  return regressor_cols_.col(col);
}

namespace {
void grow_cols(Mat& m, int used, Eigen::Index rows) {
  if (m.cols() == 0) {
    m.resize(rows, 16);
  } else if (used == m.cols()) {
    Mat grown(rows, m.cols() * 2);
    grown.leftCols(used) = m.leftCols(used);
    m.swap(grown);
  }
}
}  // namespace

void Dataset::cache_feature_for(int k) {
  if (orders_.feature_size() == 0) return;
  if (!regressor_available(k) || k >= num_inputs()) return;
  const Regressor r = build_regressor(k, inputs_[static_cast<size_t>(k)]);
  if (num_features_ == 0) first_feature_time_ = k;
  grow_cols(regressor_cols_, num_features_, orders_.feature_size());
  regressor_cols_.col(num_features_++) = r.values;
}

void Dataset::cache_pair_for(int j) {
  if (orders_.feature_size() == 0) return;
  const int k = j - 1;  // pair j uses regressor x_{j-1}
  if (num_features_ == 0 || k < first_feature_time_ ||
      k >= first_feature_time_ + num_features_)
    return;
  grow_cols(feature_pair_cols_, num_pairs_, orders_.feature_size());
  grow_cols(target_pair_cols_, num_pairs_, orders_.n_y);
  feature_pair_cols_.col(num_pairs_) = regressor_cols_.col(k - first_feature_time_);
  target_pair_cols_.col(num_pairs_) = outputs_[static_cast<size_t>(j)];
  ++num_pairs_;
}

}  // namespace alsid
