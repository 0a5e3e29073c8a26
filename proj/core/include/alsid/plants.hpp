#pragma once

#include <functional>
#include <string>
#include <vector>

#include "alsid/rng.hpp"
#include "alsid/types.hpp"

namespace alsid {

/// Continuous-time ground-truth system sampled with a zero-order hold.
struct PlantSpec {
  std::string name;
  int state_size = 0;
  int input_size = 1;
  int output_size = 1;
  Vec x0;
  double ts = 1.0;     // sample period, seconds
  double gamma = 0.0;  // multiplicative output-noise factor

  std::function<Vec(const Vec& x, const Vec& u)> rhs;
  std::function<Vec(const Vec& x)> output;
  /// Optional state projection applied after each sampled step
  /// (e.g. tank levels saturate at zero).
  std::function<Vec(const Vec& x)> project;

  Mat pool;   // physical candidate inputs, one per row
  Vec y_min;  // physical output bounds; empty when unconstrained
  Vec y_max;
};

/// Multiplicative Gaussian output noise y * (1 + gamma * eps), eps ~ N(0,1)
/// drawn from a named counter-based stream so the realization at sample k
/// does not depend on the inputs chosen so far.
struct NoiseModel {
  double gamma = 0.0;
  RngStream stream;

  Vec apply(const Vec& y, std::uint64_t sample_index) const;
};

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  long max_substeps = 200000;
};

/// One embedded Dormand-Prince 5(4) step of size h: the 5th-order solution
/// and the 4th-order companion used for error control.
struct Dopri5Step {
  Vec x5;
  Vec x4;
};
Dopri5Step dopri5_step(const std::function<Vec(const Vec&)>& f, const Vec& x, double h);

/// Integrates the plant over exactly one sample period with u held constant,
/// using adaptive Dormand-Prince steps. Throws StepSizeUnderflow if the step
/// controller collapses.
Vec integrate_step(const PlantSpec& spec, const Vec& x, const Vec& u,
                   const IntegratorOptions& opts = {});

/// Noisy output sample at index k.
Vec measure(const PlantSpec& spec, const Vec& x, const NoiseModel& noise,
            std::uint64_t k);

/// Arithmetic input grid {lo, lo+step, ...} up to hi.
Mat grid_pool(double lo, double hi, double step);

/// Registered desk-scale benchmarks: "two-tank", "oxidation", "robot-arm".
PlantSpec make_benchmark(const std::string& name);
std::vector<std::string> benchmark_names();

/// Loads a custom plant from a structured-text definition with
/// polynomial/rational right-hand sides. See docs in the repository README.
PlantSpec load_plant_file(const std::string& path);
/// Same, but parsing the definition text directly.
PlantSpec parse_plant_definition(const std::string& text, const std::string& name);

}  // namespace alsid
