// Command-line harness for online experiment design: single runs, multi-seed
// strategy sweeps, metrics recomputation, and plot exports.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "alsid/harness.hpp"

namespace fs = std::filesystem;
using namespace alsid;

namespace {

std::vector<Strategy> parse_strategies(const std::string& csv) {
  std::vector<Strategy> out;
  std::istringstream in(csv);
  std::string token;
  while (std::getline(in, token, ',')) {
    if (!token.empty()) out.push_back(strategy_from_string(token));
  }
  if (out.empty()) throw Error("no strategies given");
  return out;
}

void print_metrics(const std::string& label, const RunMetrics& m) {
  std::printf("%s: rmse_train=%.6g rmse_test=%.6g r2_test=%.4g%% mcv=%.6g\n", label.c_str(),
              m.rmse_train, m.rmse_test, m.r2_test, m.mcv);
}

int cmd_run(const std::string& config_path, const std::string& strategy,
            std::int64_t seed, const std::string& out_dir, int threads) {
  ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  if (!strategy.empty()) cfg.strategy = strategy_from_string(strategy);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (threads > 0) cfg.threads = threads;

  TestSet test;
  const TestSet* test_ptr = nullptr;
  if (cfg.n_test > 0) {
    test = generate_test_set(plant_from_config(cfg), cfg.n_test, cfg.test_seed);
    test_ptr = &test;
  }
  const RunResult result = run_experiment(cfg, cfg.seed, test_ptr);
  print_metrics(strategy_name(cfg.strategy), result.metrics);
  if (!result.trace.ok()) std::printf("status: %s\n", result.trace.status.c_str());

  if (!out_dir.empty()) {
    write_run_dir(out_dir, cfg, cfg.seed, result);
    if (test_ptr) write_test_csv(out_dir + "/test.csv", test);
    std::printf("wrote %s\n", out_dir.c_str());
  }
  return result.trace.ok() ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::string& strategies_csv, int runs,
              const std::string& out_dir, int threads) {
  ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  if (threads > 0) cfg.threads = threads;
  const std::vector<Strategy> strategies = parse_strategies(strategies_csv);
  const int n_runs = runs > 0 ? runs : cfg.runs;

  const SweepResult result = sweep(cfg, strategies, n_runs);
  for (const StrategySweep& ss : result.strategies) {
    std::printf("%s (%zu runs, %d aborted): median rmse_test=%.6g r2=%.4g%% mcv=%.6g\n",
                strategy_name(ss.strategy).c_str(), ss.report.runs.size(),
                ss.report.aborted_runs, ss.report.median.rmse_test,
                ss.report.median.r2_test, ss.report.median.mcv);
  }
  if (!out_dir.empty()) {
    write_sweep_dir(out_dir, cfg, result);
    std::printf("wrote %s\n", out_dir.c_str());
  }
  return 0;
}

int cmd_metrics(const std::string& trace_path, const std::string& test_path,
                const std::string& checkpoint_path) {
  const RunTrace trace = read_trace_csv(trace_path);
  const fs::path dir = fs::path(trace_path).parent_path();

  std::string ckpt_path = checkpoint_path;
  if (ckpt_path.empty()) ckpt_path = (dir / "checkpoint.bin").string();
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);

  ExperimentConfig cfg;
  const fs::path meta_path = dir / "run.meta";
  if (fs::exists(meta_path)) {
    const IniFile meta = IniFile::parse_file(meta_path.string());
    cfg.plant = meta.get("run", "plant", cfg.plant);
    cfg.model_kind = model_kind_from_string(meta.get("run", "model", "narx-nn"));
    cfg.n_init = meta.get_int("run", "n_init", cfg.n_init);
    cfg.n_total = meta.get_int("run", "n_total", cfg.n_total);
    cfg.p0 = meta.get_double("ekf", "p0", cfg.p0);
    cfg.q_theta = meta.get_double("ekf", "q_theta", cfg.q_theta);
    cfg.r = meta.get_double("ekf", "r", cfg.r);
    cfg.p0_x = meta.get_double("ekf", "p0_x", cfg.p0_x);
    cfg.q_x = meta.get_double("ekf", "q_x", cfg.q_x);
  }

  const TestSet test = read_test_csv(test_path);
  const RunMetrics m = evaluate(ckpt, trace, test, cfg);
  print_metrics("metrics", m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online design of experiments for system identification by active learning"};
  app.require_subcommand(1);

  std::string config_path, strategy, strategies_csv, out_dir, trace_path, test_path,
      checkpoint_path, sweep_dir;
  std::int64_t seed = -1;
  int runs = 0;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--strategy", strategy, "Override strategy (passive|ideal|gsx|igs|qbc)");
  run->add_option("--seed", seed, "Override base seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Pool-scoring threads");

  auto* sw = app.add_subcommand("sweep", "Multi-seed strategy sweep");
  sw->add_option("--config", config_path, "Config file")->required();
  sw->add_option("--strategies", strategies_csv, "Comma-separated strategies")->required();
  sw->add_option("--runs", runs, "Number of seeds (default from config)");
  sw->add_option("--out", out_dir, "Output directory");
  sw->add_option("--threads", threads, "Parallel runs");

  auto* me = app.add_subcommand("metrics", "Recompute metrics from a saved trace");
  me->add_option("--trace", trace_path, "trace.csv path")->required();
  me->add_option("--test", test_path, "test.csv path")->required();
  me->add_option("--checkpoint", checkpoint_path, "checkpoint.bin (default: next to trace)");

  auto* ex = app.add_subcommand("export-plots", "Aggregate per-run RMSE curves of a sweep");
  ex->add_option("--sweep", sweep_dir, "Sweep output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, strategy, seed, out_dir, threads);
    if (sw->parsed()) return cmd_sweep(config_path, strategies_csv, runs, out_dir, threads);
    if (me->parsed()) return cmd_metrics(trace_path, test_path, checkpoint_path);
    if (ex->parsed()) {
      export_plot_csvs(sweep_dir);
      std::printf("wrote curve CSVs under %s\n", sweep_dir.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
