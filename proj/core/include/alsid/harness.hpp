#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alsid/checkpoint.hpp"
#include "alsid/config.hpp"
#include "alsid/estimation.hpp"
#include "alsid/metrics.hpp"
#include "alsid/plants.hpp"

namespace alsid {

/// Test sequence in physical units, one sample per row.
struct TestSet {
  Mat u;
  Mat y;
  int size() const { return static_cast<int>(u.rows()); }
};

/// Simulates the plant from its initial state under uniform pool inputs
/// drawn from the dedicated test seed.
TestSet generate_test_set(const PlantSpec& plant, int n_test, std::uint64_t test_seed);

struct RunResult {
  RunTrace trace;
  RunMetrics metrics;
  Checkpoint checkpoint;
  std::vector<std::pair<int, double>> rmse_curve;  // (k, test RMSE so far)
};

/// Online experiment design for NARX models: passive phase, batch EKF
/// initialization, then per-step EKF update and pool acquisition.
RunResult run_narx(const ExperimentConfig& cfg, std::uint64_t seed, const TestSet* test);

/// Online experiment design for state-space models: passive phase,
/// quasi-Newton batch initialization, joint EKF refinement, state-sequence
/// reconstruction every m steps, then per-step acquisition over q = [x, u].
RunResult run_ss(const ExperimentConfig& cfg, std::uint64_t seed, const TestSet* test);

/// Dispatch on cfg.model_kind. Generates the test set internally when
/// `test` is null and cfg.n_test > 0.
RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                         const TestSet* test = nullptr);

/// Evaluation metrics for a finished run: training RMSE from the trace,
/// test RMSE and R2 from the checkpointed model, MCV over the active window.
RunMetrics evaluate(const Checkpoint& ckpt, const RunTrace& trace, const TestSet& test,
                    const ExperimentConfig& cfg);

struct StrategySweep {
  Strategy strategy = Strategy::Ideal;
  std::vector<RunResult> runs;
  MetricsReport report;
  /// Per-step median/MAD test-RMSE across runs at shared checkpoints.
  std::vector<int> curve_steps;
  std::vector<double> curve_median;
  std::vector<double> curve_mad;
};

struct SweepResult {
  std::vector<StrategySweep> strategies;
};

/// Paired multi-seed comparison: run r of every strategy uses seed
/// base_seed + r, so all strategies share the same passive prefix and noise
/// realization at a given r. Runs execute in parallel across seeds when
/// cfg.threads > 1; results are independent of the thread count.
SweepResult sweep(const ExperimentConfig& cfg, const std::vector<Strategy>& strategies,
                  int n_runs);

// --- Persistence -----------------------------------------------------------

void write_trace_csv(const std::string& path, const RunTrace& trace);
RunTrace read_trace_csv(const std::string& path);

void write_test_csv(const std::string& path, const TestSet& test);
TestSet read_test_csv(const std::string& path);

void write_run_meta(const std::string& path, const ExperimentConfig& cfg,
                    std::uint64_t seed, const RunTrace& trace);

void write_metrics_report(const std::string& path, const MetricsReport& report);

void write_rmse_curve_csv(const std::string& path,
                          const std::vector<std::pair<int, double>>& curve);
std::vector<std::pair<int, double>> read_rmse_curve_csv(const std::string& path);

/// Writes one run directory: trace.csv, checkpoint.bin, run.meta,
/// rmse_curve.csv, metrics.txt.
void write_run_dir(const std::string& dir, const ExperimentConfig& cfg,
                   std::uint64_t seed, const RunResult& result);

/// Writes a sweep directory: per-strategy run dirs plus aggregated metrics
/// and plot-ready median/MAD RMSE curves.
void write_sweep_dir(const std::string& dir, const ExperimentConfig& cfg,
                     const SweepResult& result);

/// Re-derives the per-strategy median/MAD curve CSVs from the run
/// directories under `sweep_dir` (the export-plots CLI entry point).
void export_plot_csvs(const std::string& sweep_dir);

/// Loads the plant named by the config ("<benchmark>" or "custom:<path>").
PlantSpec plant_from_config(const ExperimentConfig& cfg);

}  // namespace alsid
