#include <doctest.h>

#include <cmath>

#include "alsid/models.hpp"
#include "support/test_support.hpp"

using namespace alsid;
using namespace alsid::testing;

namespace {

// Independent NARX-net oracle: nested-loop forward pass.
Vec naive_narx_forward(const detail::Mlp2& net, const Vec& x) {
  auto dense = [](const Mat& W, const Vec& b, const Vec& v) {
    Vec out(W.rows());
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double acc = b[i];
      for (Eigen::Index j = 0; j < W.cols(); ++j) acc += W(i, j) * v[j];
      out[i] = acc;
    }
    return out;
  };
  Vec h1 = dense(net.W1, net.b1, x);
  for (Eigen::Index i = 0; i < h1.size(); ++i) h1[i] = std::atan(h1[i]);
  Vec h2 = dense(net.W2, net.b2, h1);
  for (Eigen::Index i = 0; i < h2.size(); ++i) h2[i] = std::atan(h2[i]);
  return dense(net.W3, net.b3, h2);
}

}  // namespace

TEST_CASE("linear ARX prediction and jacobian") {
  LinearArx m(2, 1);
  Vec theta(2);
  theta << 0.5, 1.0;
  m.set_params(theta);
  Vec x(2);
  x << 1.0, 2.0;
  CHECK(m.predict(x)[0] == doctest::Approx(2.5));
  const Mat H = m.param_jacobian(x);
  CHECK(H.rows() == 1);
  CHECK((H.transpose() - x).norm() == 0.0);  // jacobian equals x' exactly
}

TEST_CASE("narx net with zero weights returns output bias") {
  NarxNet m(4, 3, 2, 1);
  Vec theta = m.params();
  theta.setZero();
  theta[theta.size() - 1] = 0.7;  // b3
  m.set_params(theta);
  CHECK(m.predict(Vec::Ones(4))[0] == doctest::Approx(0.7));
}

TEST_CASE("narx net forward matches naive nested-loop oracle") {
  RngStream rng(31, "narx-fwd");
  for (int trial = 0; trial < 20; ++trial) {
    NarxNet m(5, 4, 3, 2);
    m.init_weights(rng);
    Vec theta = m.params();
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.1 * rng.normal();
    m.set_params(theta);
    const Vec x = random_vec(rng, 5);
    const Vec got = m.predict(x);
    const Vec want = naive_narx_forward(m.net(), x);
    CHECK((got - want).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("narx net batched prediction equals per-column prediction") {
  RngStream rng(37, "narx-batch");
  NarxNet m(3, 4, 3, 1);
  m.init_weights(rng);
  const Mat X = random_mat(rng, 3, 17);
  const Mat Y = m.predict_cols(X);
  for (int j = 0; j < 17; ++j)
    CHECK((Y.col(j) - m.predict(X.col(j))).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("narx net parameter jacobian matches central finite differences") {
  RngStream rng(41, "narx-jac");
  NarxNet m(4, 5, 3, 2);
  m.init_weights(rng);
  const Vec x = random_vec(rng, 4);
  const Vec theta0 = m.params();
  auto f = [&](const Vec& th) {
    NarxNet tmp = m;
    tmp.set_params(th);
    return tmp.predict(x);
  };
  const Mat J = m.param_jacobian(x);
  const Mat Jfd = fd_jacobian(f, theta0);
  CHECK((J - Jfd).lpNorm<Eigen::Infinity>() < 1e-5);
}

TEST_CASE("zero regressor zeroes the W1 jacobian columns fed by it") {
  NarxNet m(3, 4, 2, 1);
  RngStream rng(43, "narx-zero");
  m.init_weights(rng);
  const Mat J = m.param_jacobian(Vec::Zero(3));
  // layout starts with vec_r(W1): entries multiply x[q]
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 3; ++q) CHECK(J(0, p * 3 + q) == 0.0);
}

TEST_CASE("flatten/unflatten round-trips exactly") {
  RngStream rng(47, "flat");
  NarxNet nn(4, 5, 3, 2);
  nn.init_weights(rng);
  Vec t = nn.params();
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  nn.set_params(t);
  CHECK((nn.params() - t).norm() == 0.0);

  RnnSS ss(3, 1, 1, 4, 3, 2);
  ss.init_weights(rng);
  Vec ts = ss.params();
  for (Eigen::Index i = 0; i < ts.size(); ++i) ts[i] = rng.normal();
  ss.set_params(ts);
  CHECK((ss.params() - ts).norm() == 0.0);
}

TEST_CASE("step_ss with zero weights returns biases, y computed from x") {
  RnnSS m(2, 1, 1, 3, 2, 2);
  Vec theta = Vec::Zero(m.param_count());
  m.set_params(theta);
  // set b3x and b2y through the flat layout by using the nets directly
  Vec tx = m.params_x();
  tx.tail(2) << 0.25, -0.5;  // b3x
  m.set_params_x(tx);
  Vec ty = m.params_y();
  ty.tail(1) << 0.125;  // b2y
  m.set_params_y(ty);

  const auto [x_next, y] = step_ss(m, Vec::Ones(2), Vec::Ones(1));
  CHECK(x_next[0] == doctest::Approx(0.25));
  CHECK(x_next[1] == doctest::Approx(-0.5));
  CHECK(y[0] == doctest::Approx(0.125));
}

TEST_CASE("step_ss matches first-order Taylor expansion for tiny inputs") {
  RngStream rng(53, "taylor");
  RnnSS m(3, 1, 1, 4, 3, 2);
  m.init_weights(rng);
  const Vec x0 = random_vec(rng, 3);
  const Vec u0 = random_vec(rng, 1);
  const Mat A = m.jac_state_x(x0, u0);
  const Vec base = m.step_state(x0, u0);
  const Vec dx = random_vec(rng, 3).normalized() * 1e-4;
  const Vec pred = base + A * dx;
  const Vec got = m.step_state(x0 + dx, u0);
  CHECK((got - pred).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("50-step rollout equals an independently coded recursion bit for bit") {
  RngStream rng(59, "rollout");
  RnnSS m(2, 1, 1, 3, 3, 2);
  m.init_weights(rng);
  const auto& fx = m.state_net();
  const auto& fy = m.output_net();

  Vec x = random_vec(rng, 2);
  Vec x_ref = x;
  for (int k = 0; k < 50; ++k) {
    const Vec u = random_vec(rng, 1);
    const auto [xn, y] = step_ss(m, x, u);
    // second implementation of the same recursion
    const Vec h1 = (fx.W1 * (Vec(3) << x_ref, u).finished() + fx.b1).array().tanh();
    const Vec h2 = (fx.W2 * h1 + fx.b2).array().tanh();
    const Vec xn_ref = fx.W3 * h2 + fx.b3;
    const Vec hy = (fy.W1 * x_ref + fy.b1).array().tanh();
    const Vec y_ref = fy.W2 * hy + fy.b2;
    CHECK((xn - xn_ref).norm() == 0.0);
    CHECK((y - y_ref).norm() == 0.0);
    x = xn;
    x_ref = xn_ref;
  }
}

TEST_CASE("state-space jacobians match central finite differences") {
  RngStream rng(61, "ss-jac");
  RnnSS m(3, 2, 2, 4, 3, 3);
  m.init_weights(rng);
  const Vec x = random_vec(rng, 3);
  const Vec u = random_vec(rng, 2);

  const Mat A = m.jac_state_x(x, u);
  const Mat Afd = fd_jacobian([&](const Vec& xv) { return m.step_state(xv, u); }, x);
  CHECK((A - Afd).lpNorm<Eigen::Infinity>() < 1e-5);

  const Mat B = m.jac_state_params(x, u);
  const Vec tx0 = m.params_x();
  const Mat Bfd = fd_jacobian(
      [&](const Vec& th) {
        RnnSS tmp = m;
        tmp.set_params_x(th);
        return tmp.step_state(x, u);
      },
      tx0);
  CHECK((B - Bfd).lpNorm<Eigen::Infinity>() < 1e-5);

  const Mat C = m.jac_out_x(x);
  const Mat Cfd = fd_jacobian([&](const Vec& xv) { return m.output(xv); }, x);
  CHECK((C - Cfd).lpNorm<Eigen::Infinity>() < 1e-5);

  const Mat D = m.jac_out_params(x);
  const Vec ty0 = m.params_y();
  const Mat Dfd = fd_jacobian(
      [&](const Vec& th) {
        RnnSS tmp = m;
        tmp.set_params_y(th);
        return tmp.output(x);
      },
      ty0);
  CHECK((D - Dfd).lpNorm<Eigen::Infinity>() < 1e-5);
}

TEST_CASE("linear state-space jacobian equals the state matrix exactly") {
  RngStream rng(67, "lin-ss");
  LinearSS sys(random_stable(rng, 3), random_mat(rng, 3, 1), random_mat(rng, 1, 3));
  const Vec x = random_vec(rng, 3);
  const Vec u = random_vec(rng, 1);
  CHECK((sys.jac_state_x(x, u) - sys.A).norm() == 0.0);
  // and its parameter jacobians pass the finite-difference check too
  const Mat Bfd = fd_jacobian(
      [&](const Vec& th) {
        LinearSS tmp = sys;
        tmp.set_params_x(th);
        return tmp.step_state(x, u);
      },
      sys.params_x());
  CHECK((sys.jac_state_params(x, u) - Bfd).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("predictions are pure") {
  RngStream rng(71, "pure");
  NarxNet m(3, 4, 2, 1);
  m.init_weights(rng);
  const Vec x = random_vec(rng, 3);
  const Vec y1 = m.predict(x);
  const Vec y2 = m.predict(x);
  CHECK((y1 - y2).norm() == 0.0);

  RnnSS s(2, 1, 1, 3, 2, 2);
  s.init_weights(rng);
  const Vec xs = random_vec(rng, 2);
  const Vec us = random_vec(rng, 1);
  CHECK((s.step_state(xs, us) - s.step_state(xs, us)).norm() == 0.0);
}

TEST_CASE("augmented point splits back into state and input") {
  Vec x(2);
  x << 1.0, 2.0;
  Vec u(1);
  u << 3.0;
  const AugmentedPoint q = AugmentedPoint::join(x, u);
  CHECK(q.q.size() == 3);
  CHECK((q.state_part() - x).norm() == 0.0);
  CHECK((q.input_part() - u).norm() == 0.0);
}
