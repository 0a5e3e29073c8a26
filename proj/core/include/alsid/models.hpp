#pragma once

#include <memory>
#include <utility>

#include "alsid/rng.hpp"
#include "alsid/types.hpp"

namespace alsid {

/// One-step predictor y = f(x, theta) over regressor features, exposing the
/// parameter Jacobian needed by the EKF.
class NarxModel {
 public:
  virtual ~NarxModel() = default;

  virtual int feature_size() const = 0;
  virtual int output_size() const = 0;
  virtual int param_count() const = 0;

  virtual Vec params() const = 0;
  virtual void set_params(const Vec& theta) = 0;

  virtual Vec predict(const Vec& x) const = 0;
  /// d(f)/d(theta) at x, output_size x param_count.
  virtual Mat param_jacobian(const Vec& x) const = 0;

  /// Batched prediction over feature columns (d x P) -> (n_y x P).
  virtual Mat predict_cols(const Eigen::Ref<const Mat>& X) const;

  virtual std::unique_ptr<NarxModel> clone() const = 0;
};

/// Linear ARX predictor f(x, theta) = Theta * x, theta = row-major vec(Theta).
class LinearArx final : public NarxModel {
 public:
  LinearArx(int feature_size, int output_size);

  int feature_size() const override { return n_x_; }
  int output_size() const override { return n_y_; }
  int param_count() const override { return n_x_ * n_y_; }

  Vec params() const override { return theta_; }
  void set_params(const Vec& theta) override;

  Vec predict(const Vec& x) const override;
  Mat param_jacobian(const Vec& x) const override;
  std::unique_ptr<NarxModel> clone() const override {
    return std::make_unique<LinearArx>(*this);
  }

 private:
  int n_x_;
  int n_y_;
  Vec theta_;
};

namespace detail {

enum class Act { Atan, Tanh };

inline double act(Act a, double v) { return a == Act::Atan ? std::atan(v) : std::tanh(v); }
inline double act_deriv(Act a, double pre, double post) {
  return a == Act::Atan ? 1.0 / (1.0 + pre * pre) : 1.0 - post * post;
}

/// Two-hidden-layer perceptron with linear output:
/// y = W3 act(W2 act(W1 v + b1) + b2) + b3.
struct Mlp2 {
  Mat W1, W2, W3;
  Vec b1, b2, b3;
  Act activation = Act::Atan;

  Mlp2() = default;
  Mlp2(int in, int h1, int h2, int out, Act a);

  int in_size() const { return static_cast<int>(W1.cols()); }
  int out_size() const { return static_cast<int>(W3.rows()); }
  int param_count() const;

  Vec forward(const Vec& v) const;
  Mat forward_cols(const Eigen::Ref<const Mat>& V) const;
  /// d(out)/d(params), params = [vec_r(W1), b1, vec_r(W2), b2, vec_r(W3), b3].
  Mat param_jacobian(const Vec& v) const;
  /// d(out)/d(input).
  Mat input_jacobian(const Vec& v) const;

  Vec flatten() const;
  void unflatten(const Vec& theta);
  void init_weights(RngStream& rng);
};

/// One-hidden-layer perceptron with linear output:
/// y = W2 act(W1 v + b1) + b2.
struct Mlp1 {
  Mat W1, W2;
  Vec b1, b2;
  Act activation = Act::Tanh;

  Mlp1() = default;
  Mlp1(int in, int h1, int out, Act a);

  int in_size() const { return static_cast<int>(W1.cols()); }
  int out_size() const { return static_cast<int>(W2.rows()); }
  int param_count() const;

  Vec forward(const Vec& v) const;
  Mat param_jacobian(const Vec& v) const;
  Mat input_jacobian(const Vec& v) const;

  Vec flatten() const;
  void unflatten(const Vec& theta);
  void init_weights(RngStream& rng);
};

}  // namespace detail

/// Two-layer neural NARX predictor with arctangent hidden activations.
class NarxNet final : public NarxModel {
 public:
  NarxNet(int feature_size, int hidden1, int hidden2, int output_size);

  int feature_size() const override { return net_.in_size(); }
  int output_size() const override { return net_.out_size(); }
  int param_count() const override { return net_.param_count(); }

  Vec params() const override { return net_.flatten(); }
  void set_params(const Vec& theta) override { net_.unflatten(theta); }

  Vec predict(const Vec& x) const override;
  Mat param_jacobian(const Vec& x) const override;
  Mat predict_cols(const Eigen::Ref<const Mat>& X) const override;

  std::unique_ptr<NarxModel> clone() const override {
    return std::make_unique<NarxNet>(*this);
  }

  void init_weights(RngStream& rng) { net_.init_weights(rng); }

  const detail::Mlp2& net() const { return net_; }

 private:
  detail::Mlp2 net_;
};

/// Strictly causal parametric state-space model
///   x_{k+1} = f_x(x_k, u_k, theta_x),  y_k = f_y(x_k, theta_y)
/// with the Jacobians the joint EKF and the smoother need.
class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual int state_size() const = 0;
  virtual int input_size() const = 0;
  virtual int output_size() const = 0;
  virtual int param_count_x() const = 0;
  virtual int param_count_y() const = 0;
  int param_count() const { return param_count_x() + param_count_y(); }

  virtual Vec params_x() const = 0;
  virtual Vec params_y() const = 0;
  virtual void set_params_x(const Vec&) = 0;
  virtual void set_params_y(const Vec&) = 0;
  Vec params() const;
  void set_params(const Vec& theta);

  virtual Vec step_state(const Vec& x, const Vec& u) const = 0;
  virtual Vec output(const Vec& x) const = 0;

  virtual Mat jac_state_x(const Vec& x, const Vec& u) const = 0;
  virtual Mat jac_state_params(const Vec& x, const Vec& u) const = 0;
  virtual Mat jac_out_x(const Vec& x) const = 0;
  virtual Mat jac_out_params(const Vec& x) const = 0;

  virtual std::unique_ptr<StateSpaceModel> clone() const = 0;
};

/// Recurrent network state-space model: tanh state-update net with two
/// hidden layers, tanh output net with one hidden layer.
class RnnSS final : public StateSpaceModel {
 public:
  RnnSS(int state_size, int input_size, int output_size, int h1x, int h2x, int h1y);

  int state_size() const override { return nx_; }
  int input_size() const override { return nu_; }
  int output_size() const override { return fy_.out_size(); }
  int param_count_x() const override { return fx_.param_count(); }
  int param_count_y() const override { return fy_.param_count(); }

  Vec params_x() const override { return fx_.flatten(); }
  Vec params_y() const override { return fy_.flatten(); }
  void set_params_x(const Vec& t) override { fx_.unflatten(t); }
  void set_params_y(const Vec& t) override { fy_.unflatten(t); }

  Vec step_state(const Vec& x, const Vec& u) const override;
  Vec output(const Vec& x) const override;

  Mat jac_state_x(const Vec& x, const Vec& u) const override;
  Mat jac_state_params(const Vec& x, const Vec& u) const override;
  Mat jac_out_x(const Vec& x) const override;
  Mat jac_out_params(const Vec& x) const override;

  std::unique_ptr<StateSpaceModel> clone() const override {
    return std::make_unique<RnnSS>(*this);
  }

  void init_weights(RngStream& rng);

  const detail::Mlp2& state_net() const { return fx_; }
  const detail::Mlp1& output_net() const { return fy_; }

 private:
  Vec joint(const Vec& x, const Vec& u) const;

  int nx_;
  int nu_;
  detail::Mlp2 fx_;
  detail::Mlp1 fy_;
};

/// State-input point q = [x', u']' explored by state-space acquisition.
struct AugmentedPoint {
  Vec q;
  int state_size = 0;

  static AugmentedPoint join(const Vec& x, const Vec& u);
  Vec state_part() const { return q.head(state_size); }
  Vec input_part() const { return q.tail(q.size() - state_size); }
};

/// One model step: returns (x_next, y) where y is computed from x, not
/// x_next (strict causality).
std::pair<Vec, Vec> step_ss(const StateSpaceModel& m, const Vec& x, const Vec& u);

}  // namespace alsid
