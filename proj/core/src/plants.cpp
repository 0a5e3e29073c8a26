#include "alsid/plants.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace alsid {

Vec NoiseModel::apply(const Vec& y, std::uint64_t sample_index) const {
  if (gamma == 0.0) return y;
  Vec out = y;
  const auto ny = static_cast<std::uint64_t>(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double eps = stream.normal_at(sample_index * ny + static_cast<std::uint64_t>(i));
    out[i] = y[i] * (1.0 + gamma * eps);
  }
  return out;
}

Dopri5Step dopri5_step(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                      e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;

  const Vec k1 = f(x);
  const Vec k2 = f(x + h * (a21 * k1));
  const Vec k3 = f(x + h * (a31 * k1 + a32 * k2));
  const Vec k4 = f(x + h * (a41 * k1 + a42 * k2 + a43 * k3));
  const Vec k5 = f(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
  const Vec k6 = f(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));

  Dopri5Step out;
  out.x5 = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  const Vec k7 = f(out.x5);
  out.x4 = x + h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  return out;
}

Vec integrate_step(const PlantSpec& spec, const Vec& x0, const Vec& u,
                   const IntegratorOptions& opts) {
  auto f = [&](const Vec& x) { return spec.rhs(x, u); };
  const double t_end = spec.ts;
  const double h_min = 1e-13 * spec.ts;

  Vec x = x0;
  double t = 0.0;
  double h = t_end;
  long substeps = 0;
  while (t < t_end) {
    if (++substeps > opts.max_substeps)
      throw StepSizeUnderflow("integrate_step: substep budget exhausted");
    h = std::min(h, t_end - t);
    const Dopri5Step step = dopri5_step(f, x, h);

    double err = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double scale =
          opts.atol + opts.rtol * std::max(std::abs(x[i]), std::abs(step.x5[i]));
      const double e = (step.x5[i] - step.x4[i]) / scale;
      err += e * e;
    }
    err = std::sqrt(err / static_cast<double>(x.size()));

    if (!std::isfinite(err)) {
      h *= 0.2;
      if (h < h_min) throw StepSizeUnderflow("integrate_step: non-finite error estimate");
      continue;
    }
    if (err <= 1.0) {
      t += h;
      x = step.x5;
    }
    const double factor =
        std::clamp(0.9 * std::pow(std::max(err, 1e-16), -0.2), 0.2, 5.0);
    h *= factor;
    if (h < h_min && t < t_end)
      throw StepSizeUnderflow("integrate_step: step size underflow");
  }
  if (spec.project) x = spec.project(x);
  return x;
}

Vec measure(const PlantSpec& spec, const Vec& x, const NoiseModel& noise,
            std::uint64_t k) {
  return noise.apply(spec.output(x), k);
}

Mat grid_pool(double lo, double hi, double step) {
  if (step <= 0.0) throw Error("grid_pool: step must be positive");
  std::vector<double> values;
  const double tol = 1e-9 * std::max(1.0, std::abs(hi));
  for (long j = 0;; ++j) {
    const double v = lo + static_cast<double>(j) * step;
    if (v > hi + tol) break;
    values.push_back(v);
  }
  Mat pool(static_cast<Eigen::Index>(values.size()), 1);
  for (size_t i = 0; i < values.size(); ++i) pool(static_cast<Eigen::Index>(i), 0) = values[i];
  return pool;
}

namespace {

PlantSpec make_two_tank() {
  // Cascaded gravity-drain tanks: pump feeds the upper tank, orifice flow
  // scales with the square root of the level, output is the lower level.
  const double kp = 0.003;
  const double c1 = 0.08;
  const double c2 = 0.10;

  PlantSpec spec;
  spec.name = "two-tank";
  spec.state_size = 2;
  spec.input_size = 1;
  spec.output_size = 1;
  spec.x0 = Vec::Zero(2);
  spec.x0 << 0.0, 0.1;
  spec.ts = 0.5;
  spec.gamma = 0.02;
  spec.rhs = [=](const Vec& x, const Vec& u) {
    const double q1 = c1 * std::sqrt(std::max(x[0], 0.0));
    const double q2 = c2 * std::sqrt(std::max(x[1], 0.0));
    Vec dx(2);
    dx[0] = kp * u[0] - q1;
    dx[1] = q1 - q2;
    return dx;
  };
  spec.output = [](const Vec& x) {
    Vec y(1);
    y[0] = std::max(x[1], 0.0);
    return y;
  };
  spec.project = [](const Vec& x) { return x.cwiseMax(0.0); };
  spec.pool = grid_pool(0.0, 10.0, 0.01);
  spec.y_min = Vec::Constant(1, 0.03);
  spec.y_max = Vec::Constant(1, 0.08);
  return spec;
}

PlantSpec make_oxidation() {
  // Four-state CSTR-style gas-phase oxidation surrogate in dimensionless
  // units: density, reactant and product concentrations, temperature. The
  // manipulated input is the feed rate; the feed concentration disturbance
  // is held at its nominal value.
  const double v_feed = 0.5;
  const double k1 = 0.0561;
  const double k2 = 0.4517;
  const double e1 = 8.0;
  const double e2 = 6.0;
  const double q1 = 0.15;
  const double q2 = 0.2;
  const double hx = 3.04;

  PlantSpec spec;
  spec.name = "oxidation";
  spec.state_size = 4;
  spec.input_size = 1;
  spec.output_size = 1;
  spec.x0 = Vec::Zero(4);
  spec.x0 << 0.9981, 0.4291, 0.0303, 1.0019;
  spec.ts = 5.0;
  spec.gamma = 0.08;
  spec.rhs = [=](const Vec& x, const Vec& u) {
    const double temp = std::max(x[3], 0.5);
    const double r1 = k1 * std::exp(e1 * (1.0 - 1.0 / temp)) * std::max(x[1], 0.0) * temp;
    const double r2 = k2 * std::exp(e2 * (1.0 - 1.0 / temp)) * std::max(x[2], 0.0) * temp;
    Vec dx(4);
    dx[0] = u[0] * (1.0 - x[0] * x[3]);
    dx[1] = u[0] * (v_feed - x[1] * x[3]) - r1;
    dx[2] = -u[0] * x[2] * x[3] + r1 - r2;
    dx[3] = (u[0] * (1.0 - x[3]) + q1 * r1 + q2 * r2 - hx * (x[3] - 1.0)) /
            std::max(x[0], 0.1);
    return dx;
  };
  spec.output = [](const Vec& x) {
    Vec y(1);
    y[0] = x[2];
    return y;
  };
  spec.pool = grid_pool(0.0704, 0.7042, 0.01);
  spec.y_min = Vec::Constant(1, 0.02);
  spec.y_max = Vec::Constant(1, 0.05);
  return spec;
}

PlantSpec make_robot_arm() {
  // Three-inertia flexible-joint arm: motor, gearbox and arm bodies linked
  // by a stiffening gear spring and an elastic shaft, with smooth Coulomb
  // friction on the motor. States: gear twist, shaft twist, and the three
  // angular velocities. Output is the motor angular velocity.
  const double jm = 0.02;
  const double jg = 0.02;
  const double ja = 0.04;
  const double kg = 400.0;
  const double kg3 = 1000.0;
  const double ka = 250.0;
  const double dg = 0.8;
  const double da = 0.5;
  const double dm = 0.5;
  const double fc = 0.4;
  const double w_eps = 0.05;
  const double d_arm = 0.3;

  PlantSpec spec;
  spec.name = "robot-arm";
  spec.state_size = 5;
  spec.input_size = 1;
  spec.output_size = 1;
  spec.x0 = Vec::Zero(5);
  spec.ts = 0.0005;
  spec.gamma = 0.08;
  spec.rhs = [=](const Vec& x, const Vec& u) {
    const double d1 = x[0], d2 = x[1], wm = x[2], wg = x[3], wa = x[4];
    const double tau1 = kg * d1 + kg3 * d1 * d1 * d1 + dg * (wm - wg);
    const double tau2 = ka * d2 + da * (wg - wa);
    Vec dx(5);
    dx[0] = wm - wg;
    dx[1] = wg - wa;
    dx[2] = (u[0] - dm * wm - fc * std::tanh(wm / w_eps) - tau1) / jm;
    dx[3] = (tau1 - tau2) / jg;
    dx[4] = (tau2 - d_arm * wa) / ja;
    return dx;
  };
  spec.output = [](const Vec& x) {
    Vec y(1);
    y[0] = x[2];
    return y;
  };
  spec.pool = grid_pool(-3.0, 3.0, 0.01);
  spec.y_min = Vec::Constant(1, -0.4);
  spec.y_max = Vec::Constant(1, 0.4);
  return spec;
}

}  // namespace

PlantSpec make_benchmark(const std::string& name) {
  if (name == "two-tank") return make_two_tank();
  if (name == "oxidation") return make_oxidation();
  if (name == "robot-arm") return make_robot_arm();
  throw Error("make_benchmark: unknown plant '" + name + "'");
}

std::vector<std::string> benchmark_names() { return {"two-tank", "oxidation", "robot-arm"}; }

// ---------------------------------------------------------------------------
// Custom plants: polynomial/rational right-hand sides from structured text.

namespace {

struct PolyFactor {
  bool is_state = true;  // state x or input u
  int index = 0;
  int power = 1;
};

struct PolyTerm {
  double coef = 1.0;
  std::vector<PolyFactor> factors;
};

using Poly = std::vector<PolyTerm>;

double eval_poly(const Poly& poly, const Vec& x, const Vec& u) {
  double total = 0.0;
  for (const PolyTerm& term : poly) {
    double v = term.coef;
    for (const PolyFactor& f : term.factors) {
      const double base = f.is_state ? x[f.index] : u[f.index];
      double p = base;
      for (int e = 1; e < f.power; ++e) p *= base;
      v *= p;
    }
    total += v;
  }
  return total;
}

void strip_spaces(std::string& s) {
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }),
          s.end());
}

// term := factor ('*' factor)*; factor := number | ('x'|'u') index ('^' power)?
PolyTerm parse_term(const std::string& text, int nx, int nu) {
  PolyTerm term;
  size_t pos = 0;
  bool any = false;
  while (pos < text.size()) {
    if (text[pos] == '*') ++pos;
    if (pos >= text.size()) break;
    const char c = text[pos];
    if (c == 'x' || c == 'u') {
      PolyFactor f;
      f.is_state = (c == 'x');
      ++pos;
      size_t len = 0;
      while (pos + len < text.size() && std::isdigit(static_cast<unsigned char>(text[pos + len])))
        ++len;
      if (len == 0) throw Error("plant definition: missing variable index in '" + text + "'");
      f.index = std::stoi(text.substr(pos, len)) - 1;
      pos += len;
      if (f.index < 0 || (f.is_state && f.index >= nx) || (!f.is_state && f.index >= nu))
        throw Error("plant definition: variable index out of range in '" + text + "'");
      if (pos < text.size() && text[pos] == '^') {
        ++pos;
        len = 0;
        while (pos + len < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[pos + len])))
          ++len;
        if (len == 0) throw Error("plant definition: missing exponent in '" + text + "'");
        f.power = std::stoi(text.substr(pos, len));
        pos += len;
      }
      term.factors.push_back(f);
      any = true;
    } else {
      size_t consumed = 0;
      const double value = std::stod(text.substr(pos), &consumed);
      if (consumed == 0) throw Error("plant definition: cannot parse term '" + text + "'");
      term.coef *= value;
      pos += consumed;
      any = true;
    }
  }
  if (!any) throw Error("plant definition: empty term");
  return term;
}

Poly parse_poly(const std::string& raw, int nx, int nu) {
  std::string text = raw;
  strip_spaces(text);
  if (text.empty()) throw Error("plant definition: empty expression");
  Poly poly;
  size_t start = 0;
  // split at top-level +/- (a sign directly after '*', '^' or 'e' exponent
  // belongs to the number)
  for (size_t i = 1; i <= text.size(); ++i) {
    const bool at_end = i == text.size();
    const bool split = !at_end && (text[i] == '+' || text[i] == '-') &&
                       text[i - 1] != '*' && text[i - 1] != '^' &&
                       text[i - 1] != 'e' && text[i - 1] != 'E';
    if (at_end || split) {
      std::string chunk = text.substr(start, i - start);
      double sign = 1.0;
      size_t p = 0;
      while (p < chunk.size() && (chunk[p] == '+' || chunk[p] == '-')) {
        if (chunk[p] == '-') sign = -sign;
        ++p;
      }
      PolyTerm term = parse_term(chunk.substr(p), nx, nu);
      term.coef *= sign;
      poly.push_back(std::move(term));
      start = i;
    }
  }
  return poly;
}

Vec parse_vector(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  Vec out(static_cast<Eigen::Index>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[i];
  return out;
}

}  // namespace

PlantSpec parse_plant_definition(const std::string& text, const std::string& name) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    if (!key.empty()) kv[key] = value;
  }

  auto require = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error("plant definition: missing key '" + key + "'");
    return it->second;
  };

  PlantSpec spec;
  spec.name = name;
  spec.state_size = std::stoi(require("states"));
  spec.input_size = std::stoi(require("inputs"));
  spec.output_size = std::stoi(require("outputs"));
  spec.x0 = parse_vector(require("x0"));
  if (spec.x0.size() != spec.state_size)
    throw Error("plant definition: x0 size does not match states");
  spec.ts = std::stod(require("ts"));
  if (kv.count("gamma")) spec.gamma = std::stod(kv["gamma"]);

  std::vector<Poly> rhs_num(static_cast<size_t>(spec.state_size));
  std::vector<Poly> rhs_den(static_cast<size_t>(spec.state_size));
  for (int i = 0; i < spec.state_size; ++i) {
    rhs_num[static_cast<size_t>(i)] =
        parse_poly(require("dx" + std::to_string(i + 1)), spec.state_size, spec.input_size);
    const auto den_it = kv.find("den" + std::to_string(i + 1));
    if (den_it != kv.end())
      rhs_den[static_cast<size_t>(i)] =
          parse_poly(den_it->second, spec.state_size, spec.input_size);
  }
  std::vector<Poly> out_poly(static_cast<size_t>(spec.output_size));
  for (int i = 0; i < spec.output_size; ++i) {
    out_poly[static_cast<size_t>(i)] =
        parse_poly(require("y" + std::to_string(i + 1)), spec.state_size, spec.input_size);
  }

  const int nx = spec.state_size;
  const int ny = spec.output_size;
  spec.rhs = [rhs_num, rhs_den, nx](const Vec& x, const Vec& u) {
    Vec dx(nx);
    for (int i = 0; i < nx; ++i) {
      double v = eval_poly(rhs_num[static_cast<size_t>(i)], x, u);
      if (!rhs_den[static_cast<size_t>(i)].empty())
        v /= eval_poly(rhs_den[static_cast<size_t>(i)], x, u);
      dx[i] = v;
    }
    return dx;
  };
  const Vec u_zero = Vec::Zero(spec.input_size);
  spec.output = [out_poly, ny, u_zero](const Vec& x) {
    Vec y(ny);
    for (int i = 0; i < ny; ++i) y[i] = eval_poly(out_poly[static_cast<size_t>(i)], x, u_zero);
    return y;
  };

  if (kv.count("pool")) {
    const std::string& p = kv["pool"];
    const size_t c1 = p.find(':');
    const size_t c2 = p.rfind(':');
    if (c1 == std::string::npos || c2 == c1)
      throw Error("plant definition: pool must be lo:step:hi");
    const double lo = std::stod(p.substr(0, c1));
    const double step = std::stod(p.substr(c1 + 1, c2 - c1 - 1));
    const double hi = std::stod(p.substr(c2 + 1));
    spec.pool = grid_pool(lo, hi, step);
  }
  if (kv.count("y_min")) spec.y_min = parse_vector(kv["y_min"]);
  if (kv.count("y_max")) spec.y_max = parse_vector(kv["y_max"]);
  return spec;
}

PlantSpec load_plant_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_plant_file: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_plant_definition(buf.str(), path);
}

}  // namespace alsid
