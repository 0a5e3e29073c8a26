#include "alsid/config.hpp"

#include <fstream>
#include <sstream>

namespace alsid {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

Vec parse_vec(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  Vec out(static_cast<Eigen::Index>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[i];
  return out;
}

}  // namespace

IniFile IniFile::parse_text(const std::string& text) {
  IniFile ini;
  std::istringstream in(text);
  std::string line;
  std::string section;
  while (std::getline(in, line)) {
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config: expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("config: empty key");
    ini.sections_[section][key] = value;
  }
  return ini;
}

IniFile IniFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string IniFile::get(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  const auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
  return has(section, key) ? std::stod(get(section, key)) : fallback;
}

int IniFile::get_int(const std::string& section, const std::string& key,
                     int fallback) const {
  return has(section, key) ? std::stoi(get(section, key)) : fallback;
}

std::int64_t IniFile::get_i64(const std::string& section, const std::string& key,
                              std::int64_t fallback) const {
  return has(section, key) ? std::stoll(get(section, key)) : fallback;
}

bool IniFile::get_bool(const std::string& section, const std::string& key,
                       bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config: bad boolean '" + v + "' for " + section + "." + key);
}

ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
  ExperimentConfig cfg;
  cfg.plant = ini.get("experiment", "plant", cfg.plant);
  cfg.model_kind =
      model_kind_from_string(ini.get("experiment", "model", model_kind_name(cfg.model_kind)));
  cfg.strategy =
      strategy_from_string(ini.get("experiment", "strategy", strategy_name(cfg.strategy)));
  cfg.n_init = ini.get_int("experiment", "n_init", cfg.n_init);
  cfg.n_total = ini.get_int("experiment", "n_total", cfg.n_total);
  cfg.n_test = ini.get_int("experiment", "n_test", cfg.n_test);
  cfg.horizon = ini.get_int("experiment", "horizon", cfg.horizon);
  cfg.runs = ini.get_int("experiment", "runs", cfg.runs);
  cfg.seed = static_cast<std::uint64_t>(ini.get_i64("experiment", "seed",
                                                    static_cast<std::int64_t>(cfg.seed)));
  cfg.test_seed = static_cast<std::uint64_t>(
      ini.get_i64("experiment", "test_seed", static_cast<std::int64_t>(cfg.test_seed)));
  cfg.threads = ini.get_int("experiment", "threads", cfg.threads);
  cfg.eval_every = ini.get_int("experiment", "eval_every", cfg.eval_every);

  cfg.n_a = ini.get_int("model", "n_a", cfg.n_a);
  cfg.n_b = ini.get_int("model", "n_b", cfg.n_b);
  cfg.n1 = ini.get_int("model", "n1", cfg.n1);
  cfg.n2 = ini.get_int("model", "n2", cfg.n2);
  cfg.n_x = ini.get_int("model", "n_x", cfg.n_x);
  cfg.n1x = ini.get_int("model", "n1x", cfg.n1x);
  cfg.n2x = ini.get_int("model", "n2x", cfg.n2x);
  cfg.n1y = ini.get_int("model", "n1y", cfg.n1y);

  cfg.delta = ini.get_double("acquisition", "delta", cfg.delta);
  cfg.alpha_state = ini.get_double("acquisition", "alpha", cfg.alpha_state);
  const std::string kernel = ini.get("acquisition", "kernel", "inverse-square");
  if (kernel == "inverse-square") {
    cfg.kernel = IdwKernel::InverseSquare;
  } else if (kernel == "exp-inverse-square") {
    cfg.kernel = IdwKernel::ExpInverseSquare;
  } else {
    throw Error("config: unknown kernel '" + kernel + "'");
  }
  cfg.enumeration_budget =
      static_cast<long>(ini.get_i64("acquisition", "enumeration_budget",
                                    cfg.enumeration_budget));
  cfg.k_qbc = ini.get_int("acquisition", "k_qbc", cfg.k_qbc);
  cfg.randomized_committee_skip =
      ini.get_bool("acquisition", "randomized_committee_skip", cfg.randomized_committee_skip);

  const std::string pen = ini.get("constraints", "penalty", "none");
  if (pen == "none") {
    cfg.penalty_mode = PenaltyMode::None;
  } else if (pen == "plain") {
    cfg.penalty_mode = PenaltyMode::Plain;
  } else if (pen == "shrunk") {
    cfg.penalty_mode = PenaltyMode::Shrunk;
  } else {
    throw Error("config: unknown penalty mode '" + pen + "'");
  }
  cfg.rho = ini.get_double("constraints", "rho", cfg.rho);
  cfg.alpha_quantile = ini.get_double("constraints", "alpha_quantile", cfg.alpha_quantile);
  cfg.beta_cap = ini.get_double("constraints", "beta_cap", cfg.beta_cap);
  if (ini.has("constraints", "y_min")) cfg.y_min_override = parse_vec(ini.get("constraints", "y_min"));
  if (ini.has("constraints", "y_max")) cfg.y_max_override = parse_vec(ini.get("constraints", "y_max"));

  cfg.p0 = ini.get_double("ekf", "p0", cfg.p0);
  cfg.q_theta = ini.get_double("ekf", "q_theta", cfg.q_theta);
  cfg.r = ini.get_double("ekf", "r", cfg.r);
  cfg.p0_x = ini.get_double("ekf", "p0_x", cfg.p0_x);
  cfg.q_x = ini.get_double("ekf", "q_x", cfg.q_x);

  cfg.n_epochs = ini.get_int("init", "n_epochs", cfg.n_epochs);
  cfg.n_batch = ini.get_int("init", "n_batch", cfg.n_batch);
  cfg.reconstruct_every = ini.get_int("init", "reconstruct_every", cfg.reconstruct_every);

  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_ini(IniFile::parse_file(path));
}

void ExperimentConfig::validate() const {
  if (n_init < 2) throw Error("config: n_init must be >= 2");
  if (n_init >= n_total) throw Error("config: n_init must be < n_total");
  if (horizon < 1) throw Error("config: horizon must be >= 1");
  if (reconstruct_every < 1) throw Error("config: reconstruct_every must be >= 1");
  if (delta < 0) throw Error("config: delta must be >= 0");
  if (rho < 0) throw Error("config: rho must be >= 0");
  if (alpha_quantile <= 0 || alpha_quantile > 1)
    throw Error("config: alpha_quantile must be in (0, 1]");
  if (beta_cap <= 0) throw Error("config: beta_cap must be > 0");
  if (model_kind == ModelKind::RnnSs && alpha_state <= 0)
    throw Error("config: alpha must be > 0 for state-space runs");
  if (model_kind != ModelKind::RnnSs && n_a + n_b < 1)
    throw Error("config: n_a + n_b must be >= 1");
  if (k_qbc < 2) throw Error("config: k_qbc must be >= 2");
  if (n_epochs < 1) throw Error("config: n_epochs must be >= 1");
  if (n_batch < 1) throw Error("config: n_batch must be >= 1");
  if (threads < 1) throw Error("config: threads must be >= 1");
  if (eval_every < 1) throw Error("config: eval_every must be >= 1");
}

}  // namespace alsid
