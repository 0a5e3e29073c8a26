#pragma once

#include <functional>

#include "alsid/types.hpp"

namespace alsid {

struct LbfgsOptions {
  int max_iterations = 100;
  int memory = 10;
  double grad_tolerance = 1e-8;  // infinity norm
  double min_step = 1e-16;
};

struct LbfgsResult {
  Vec x;
  double value = 0.0;
  Vec gradient;
  int iterations = 0;
  bool converged = false;
  /// True if the line search failed before any improvement was made.
  bool stalled = false;
};

/// Objective callback: returns f(x) and writes the gradient.
using Objective = std::function<double(const Vec& x, Vec& grad)>;

/// Limited-memory BFGS with a backtracking Armijo line search.
LbfgsResult lbfgs_minimize(const Objective& f, const Vec& x0, const LbfgsOptions& opts = {});

}  // namespace alsid
