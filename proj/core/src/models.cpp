#include "alsid/models.hpp"

#include <cmath>

namespace alsid {

Mat NarxModel::predict_cols(const Eigen::Ref<const Mat>& X) const {
  Mat Y(output_size(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) Y.col(j) = predict(X.col(j));
  return Y;
}

LinearArx::LinearArx(int feature_size, int output_size)
    : n_x_(feature_size), n_y_(output_size), theta_(Vec::Zero(feature_size * output_size)) {}

void LinearArx::set_params(const Vec& theta) {
  if (theta.size() != theta_.size()) throw DimensionMismatch("LinearArx::set_params");
  theta_ = theta;
}

Vec LinearArx::predict(const Vec& x) const {
  if (x.size() != n_x_) throw DimensionMismatch("LinearArx::predict: feature size");
  Vec y(n_y_);
  for (int i = 0; i < n_y_; ++i) y[i] = theta_.segment(i * n_x_, n_x_).dot(x);
  return y;
}

Mat LinearArx::param_jacobian(const Vec& x) const {
  Mat H = Mat::Zero(n_y_, param_count());
  for (int i = 0; i < n_y_; ++i) H.block(i, i * n_x_, 1, n_x_) = x.transpose();
  return H;
}

namespace detail {

namespace {

Vec apply_act(Act a, const Vec& v) {
  if (a == Act::Atan) return v.array().atan().matrix();
  return v.array().tanh().matrix();
}

Vec act_deriv_vec(Act a, const Vec& pre, const Vec& post) {
  if (a == Act::Atan) return (1.0 + pre.array().square()).inverse().matrix();
  return (1.0 - post.array().square()).matrix();
}

void fill_dense_block(Mat& H, Eigen::Index col0, const Mat& G, const Vec& v) {
  // d(out)/d(W[p,q]) = G(:,p) * v(q) for row-major vec(W).
  const auto rows = G.cols();
  const auto n = v.size();
  for (Eigen::Index p = 0; p < rows; ++p)
    for (Eigen::Index q = 0; q < n; ++q) H.col(col0 + p * n + q) = G.col(p) * v[q];
}

void pack_matrix(Vec& theta, Eigen::Index& pos, const Mat& W) {
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    theta.segment(pos, W.cols()) = W.row(i).transpose();
    pos += W.cols();
  }
}

void unpack_matrix(const Vec& theta, Eigen::Index& pos, Mat& W) {
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    W.row(i) = theta.segment(pos, W.cols()).transpose();
    pos += W.cols();
  }
}

void init_matrix(Mat& W, RngStream& rng) {
  const double half_width = 1.0 / std::sqrt(static_cast<double>(W.cols()));
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      W(i, j) = rng.uniform_in(-half_width, half_width);
}

}  // namespace

Mlp2::Mlp2(int in, int h1, int h2, int out, Act a)
    : W1(Mat::Zero(h1, in)),
      W2(Mat::Zero(h2, h1)),
      W3(Mat::Zero(out, h2)),
      b1(Vec::Zero(h1)),
      b2(Vec::Zero(h2)),
      b3(Vec::Zero(out)),
      activation(a) {}

int Mlp2::param_count() const {
  return static_cast<int>(W1.size() + W2.size() + W3.size() + b1.size() + b2.size() +
                          b3.size());
}

Vec Mlp2::forward(const Vec& v) const {
  if (v.size() != W1.cols()) throw DimensionMismatch("Mlp2::forward: input size");
  const Vec h1 = apply_act(activation, W1 * v + b1);
  const Vec h2 = apply_act(activation, W2 * h1 + b2);
  return W3 * h2 + b3;
}

Mat Mlp2::forward_cols(const Eigen::Ref<const Mat>& V) const {
  Mat A1 = (W1 * V).colwise() + b1;
  if (activation == Act::Atan) {
    A1 = A1.array().atan().matrix();
  } else {
    A1 = A1.array().tanh().matrix();
  }
  Mat A2 = (W2 * A1).colwise() + b2;
  if (activation == Act::Atan) {
    A2 = A2.array().atan().matrix();
  } else {
    A2 = A2.array().tanh().matrix();
  }
  return (W3 * A2).colwise() + b3;
}

Mat Mlp2::param_jacobian(const Vec& v) const {
  const Vec a1 = W1 * v + b1;
  const Vec h1 = apply_act(activation, a1);
  const Vec a2 = W2 * h1 + b2;
  const Vec h2 = apply_act(activation, a2);
  const Vec d1 = act_deriv_vec(activation, a1, h1);
  const Vec d2 = act_deriv_vec(activation, a2, h2);

  const auto n_out = W3.rows();
  Mat H = Mat::Zero(n_out, param_count());

  const Mat G2 = W3 * d2.asDiagonal();            // d(out)/d(a2)
  const Mat G1 = (G2 * W2) * d1.asDiagonal();     // d(out)/d(a1)

  Eigen::Index pos = 0;
  fill_dense_block(H, pos, G1, v);
  pos += W1.size();
  H.middleCols(pos, b1.size()) = G1;
  pos += b1.size();
  fill_dense_block(H, pos, G2, h1);
  pos += W2.size();
  H.middleCols(pos, b2.size()) = G2;
  pos += b2.size();
  // vec_r(W3): d(out_i)/d(W3[p,q]) = (i == p) * h2[q]
  for (Eigen::Index p = 0; p < n_out; ++p)
    H.block(p, pos + p * W3.cols(), 1, W3.cols()) = h2.transpose();
  pos += W3.size();
  H.middleCols(pos, b3.size()).setIdentity();
  return H;
}

Mat Mlp2::input_jacobian(const Vec& v) const {
  const Vec a1 = W1 * v + b1;
  const Vec h1 = apply_act(activation, a1);
  const Vec a2 = W2 * h1 + b2;
  const Vec h2 = apply_act(activation, a2);
  const Vec d1 = act_deriv_vec(activation, a1, h1);
  const Vec d2 = act_deriv_vec(activation, a2, h2);
  return W3 * d2.asDiagonal() * W2 * d1.asDiagonal() * W1;
}

Vec Mlp2::flatten() const {
  Vec theta(param_count());
  Eigen::Index pos = 0;
  pack_matrix(theta, pos, W1);
  theta.segment(pos, b1.size()) = b1;
  pos += b1.size();
  pack_matrix(theta, pos, W2);
  theta.segment(pos, b2.size()) = b2;
  pos += b2.size();
  pack_matrix(theta, pos, W3);
  theta.segment(pos, b3.size()) = b3;
  return theta;
}

void Mlp2::unflatten(const Vec& theta) {
  if (theta.size() != param_count()) throw DimensionMismatch("Mlp2::unflatten");
  Eigen::Index pos = 0;
  unpack_matrix(theta, pos, W1);
  b1 = theta.segment(pos, b1.size());
  pos += b1.size();
  unpack_matrix(theta, pos, W2);
  b2 = theta.segment(pos, b2.size());
  pos += b2.size();
  unpack_matrix(theta, pos, W3);
  b3 = theta.segment(pos, b3.size());
}

void Mlp2::init_weights(RngStream& rng) {
  init_matrix(W1, rng);
  init_matrix(W2, rng);
  init_matrix(W3, rng);
  b1.setZero();
  b2.setZero();
  b3.setZero();
}

Mlp1::Mlp1(int in, int h1, int out, Act a)
    : W1(Mat::Zero(h1, in)), W2(Mat::Zero(out, h1)), b1(Vec::Zero(h1)), b2(Vec::Zero(out)),
      activation(a) {}

int Mlp1::param_count() const {
  return static_cast<int>(W1.size() + W2.size() + b1.size() + b2.size());
}

Vec Mlp1::forward(const Vec& v) const {
  if (v.size() != W1.cols()) throw DimensionMismatch("Mlp1::forward: input size");
  return W2 * apply_act(activation, W1 * v + b1) + b2;
}

Mat Mlp1::param_jacobian(const Vec& v) const {
  const Vec a1 = W1 * v + b1;
  const Vec h1 = apply_act(activation, a1);
  const Vec d1 = act_deriv_vec(activation, a1, h1);

  const auto n_out = W2.rows();
  Mat H = Mat::Zero(n_out, param_count());
  const Mat G1 = W2 * d1.asDiagonal();

  Eigen::Index pos = 0;
  fill_dense_block(H, pos, G1, v);
  pos += W1.size();
  H.middleCols(pos, b1.size()) = G1;
  pos += b1.size();
  for (Eigen::Index p = 0; p < n_out; ++p)
    H.block(p, pos + p * W2.cols(), 1, W2.cols()) = h1.transpose();
  pos += W2.size();
  H.middleCols(pos, b2.size()).setIdentity();
  return H;
}

Mat Mlp1::input_jacobian(const Vec& v) const {
  const Vec a1 = W1 * v + b1;
  const Vec h1 = apply_act(activation, a1);
  const Vec d1 = act_deriv_vec(activation, a1, h1);
  return W2 * d1.asDiagonal() * W1;
}

Vec Mlp1::flatten() const {
  Vec theta(param_count());
  Eigen::Index pos = 0;
  pack_matrix(theta, pos, W1);
  theta.segment(pos, b1.size()) = b1;
  pos += b1.size();
  pack_matrix(theta, pos, W2);
  theta.segment(pos, b2.size()) = b2;
  return theta;
}

void Mlp1::unflatten(const Vec& theta) {
  if (theta.size() != param_count()) throw DimensionMismatch("Mlp1::unflatten");
  Eigen::Index pos = 0;
  unpack_matrix(theta, pos, W1);
  b1 = theta.segment(pos, b1.size());
  pos += b1.size();
  unpack_matrix(theta, pos, W2);
  b2 = theta.segment(pos, b2.size());
}

void Mlp1::init_weights(RngStream& rng) {
  init_matrix(W1, rng);
  init_matrix(W2, rng);
  b1.setZero();
  b2.setZero();
}

}  // namespace detail

NarxNet::NarxNet(int feature_size, int hidden1, int hidden2, int output_size)
    : net_(feature_size, hidden1, hidden2, output_size, detail::Act::Atan) {}

Vec NarxNet::predict(const Vec& x) const { return net_.forward(x); }

Mat NarxNet::param_jacobian(const Vec& x) const { return net_.param_jacobian(x); }

Mat NarxNet::predict_cols(const Eigen::Ref<const Mat>& X) const {
  return net_.forward_cols(X);
}

RnnSS::RnnSS(int state_size, int input_size, int output_size, int h1x, int h2x, int h1y)
    : nx_(state_size),
      nu_(input_size),
      fx_(state_size + input_size, h1x, h2x, state_size, detail::Act::Tanh),
      fy_(state_size, h1y, output_size, detail::Act::Tanh) {}

Vec RnnSS::joint(const Vec& x, const Vec& u) const {
  if (x.size() != nx_ || u.size() != nu_) throw DimensionMismatch("RnnSS: state/input size");
  Vec q(nx_ + nu_);
  q << x, u;
  return q;
}

Vec RnnSS::step_state(const Vec& x, const Vec& u) const { return fx_.forward(joint(x, u)); }

Vec RnnSS::output(const Vec& x) const { return fy_.forward(x); }

Mat RnnSS::jac_state_x(const Vec& x, const Vec& u) const {
  return fx_.input_jacobian(joint(x, u)).leftCols(nx_);
}

Mat RnnSS::jac_state_params(const Vec& x, const Vec& u) const {
  return fx_.param_jacobian(joint(x, u));
}

Mat RnnSS::jac_out_x(const Vec& x) const { return fy_.input_jacobian(x); }

Mat RnnSS::jac_out_params(const Vec& x) const { return fy_.param_jacobian(x); }

void RnnSS::init_weights(RngStream& rng) {
  fx_.init_weights(rng);
  fy_.init_weights(rng);
}

Vec StateSpaceModel::params() const {
  Vec t(param_count());
  t << params_x(), params_y();
  return t;
}

void StateSpaceModel::set_params(const Vec& theta) {
  if (theta.size() != param_count()) throw DimensionMismatch("StateSpaceModel::set_params");
  set_params_x(theta.head(param_count_x()));
  set_params_y(theta.tail(param_count_y()));
}

AugmentedPoint AugmentedPoint::join(const Vec& x, const Vec& u) {
  AugmentedPoint p;
  p.state_size = static_cast<int>(x.size());
  p.q.resize(x.size() + u.size());
  p.q << x, u;
  return p;
}

std::pair<Vec, Vec> step_ss(const StateSpaceModel& m, const Vec& x, const Vec& u) {
  return {m.step_state(x, u), m.output(x)};
}

}  // namespace alsid
