#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "alsid/acquisition.hpp"
#include "alsid/checkpoint.hpp"
#include "alsid/types.hpp"

namespace alsid {

/// Minimal INI-style structured text: [section] headers, key = value lines,
/// comments with '#' or ';'.
class IniFile {
 public:
  static IniFile parse_text(const std::string& text);
  static IniFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::int64_t get_i64(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct ExperimentConfig {
  // [experiment]
  std::string plant = "two-tank";  // benchmark name or custom:<path>
  ModelKind model_kind = ModelKind::NarxNn;
  Strategy strategy = Strategy::Ideal;
  int n_init = 80;      // N_i passive samples
  int n_total = 1000;   // N
  int n_test = 2000;    // test set length (0: skip test metrics)
  int horizon = 1;      // L
  int runs = 30;        // N_r
  std::uint64_t seed = 1;
  std::uint64_t test_seed = 424242;
  int threads = 1;
  int eval_every = 25;  // test-RMSE curve checkpoint interval

  // [model]
  int n_a = 3, n_b = 3;
  int n1 = 8, n2 = 6;
  int n_x = 2, n1x = 8, n2x = 4, n1y = 5;

  // [acquisition]
  double delta = 100.0;
  double alpha_state = 1e-3;
  IdwKernel kernel = IdwKernel::InverseSquare;
  long enumeration_budget = 100000;
  int k_qbc = 4;
  bool randomized_committee_skip = false;

  // [constraints]
  PenaltyMode penalty_mode = PenaltyMode::None;
  double rho = 1e12;
  double alpha_quantile = 0.90;
  double beta_cap = 1.0 / 3.0;
  Vec y_min_override;  // physical units; empty = use the plant's bounds
  Vec y_max_override;

  // [ekf]
  double p0 = 1e-2;
  double q_theta = 1e-10;
  double r = 1e-2;
  double p0_x = 4e-2;
  double q_x = 1e-8;

  // [init]
  int n_epochs = 50;   // N_e (NARX batch EKF epochs)
  int n_batch = 300;   // N_b (state-space quasi-Newton iterations)
  int reconstruct_every = 10;  // m

  static ExperimentConfig from_ini(const IniFile& ini);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
};

}  // namespace alsid
