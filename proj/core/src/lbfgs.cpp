#include "alsid/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace alsid {

namespace {

struct Correction {
  Vec s;
  Vec y;
  double rho;
};

// Two-loop recursion for the search direction -H*g.
Vec lbfgs_direction(const std::deque<Correction>& mem, const Vec& grad) {
  Vec q = grad;
  std::vector<double> alpha(mem.size());
  for (size_t i = mem.size(); i-- > 0;) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  if (!mem.empty()) {
    const Correction& last = mem.back();
    const double gamma = last.s.dot(last.y) / last.y.squaredNorm();
    q *= gamma;
  }
  for (size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(q);
    q += (alpha[i] - beta) * mem[i].s;
  }
  return -q;
}

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, const Vec& x0, const LbfgsOptions& opts) {
  LbfgsResult res;
  res.x = x0;
  res.gradient.resize(x0.size());
  res.value = f(res.x, res.gradient);

  std::deque<Correction> mem;
  bool any_progress = false;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter;
    if (res.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tolerance) {
      res.converged = true;
      return res;
    }

    Vec dir = lbfgs_direction(mem, res.gradient);
    double dg = dir.dot(res.gradient);
    if (!(dg < 0.0)) {  // not a descent direction; fall back to steepest descent
      dir = -res.gradient;
      dg = -res.gradient.squaredNorm();
      mem.clear();
    }

    // Backtracking Armijo search.
    const double c1 = 1e-4;
    double step = 1.0;
    Vec x_new;
    Vec g_new(res.gradient.size());
    double f_new = res.value;
    bool accepted = false;
    while (step >= opts.min_step) {
      x_new = res.x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.value + c1 * step * dg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.stalled = !any_progress;
      return res;
    }
    any_progress = true;

    Correction c;
    c.s = x_new - res.x;
    c.y = g_new - res.gradient;
    const double sy = c.s.dot(c.y);
    if (sy > 1e-12 * c.s.norm() * c.y.norm()) {
      c.rho = 1.0 / sy;
      mem.push_back(std::move(c));
      if (static_cast<int>(mem.size()) > opts.memory) mem.pop_front();
    }

    res.x = std::move(x_new);
    res.value = f_new;
    res.gradient = std::move(g_new);
  }
  res.iterations = opts.max_iterations;
  res.converged = res.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tolerance;
  return res;
}

}  // namespace alsid
