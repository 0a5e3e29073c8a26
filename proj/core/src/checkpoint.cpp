#include "alsid/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace alsid {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'S', 'I', 'D', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_vec(std::ostream& out, const Vec& v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

Vec get_vec(std::istream& in) {
  const auto n = static_cast<Eigen::Index>(get_u64(in));
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = get_f64(in);
  return v;
}

}  // namespace

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "linear-arx") return ModelKind::LinearArx;
  if (s == "narx-nn") return ModelKind::NarxNn;
  if (s == "rnn-ss") return ModelKind::RnnSs;
  throw Error("unknown model kind: " + s);
}

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::LinearArx: return "linear-arx";
    case ModelKind::NarxNn: return "narx-nn";
    case ModelKind::RnnSs: return "rnn-ss";
  }
  return "?";
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("Checkpoint::save: cannot open '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_u32(out, static_cast<std::uint32_t>(lags.n_a));
  put_u32(out, static_cast<std::uint32_t>(lags.n_b));
  put_u32(out, static_cast<std::uint32_t>(lags.n_u));
  put_u32(out, static_cast<std::uint32_t>(lags.n_y));
  put_u32(out, static_cast<std::uint32_t>(n1));
  put_u32(out, static_cast<std::uint32_t>(n2));
  put_u32(out, static_cast<std::uint32_t>(n_x));
  put_u32(out, static_cast<std::uint32_t>(n1x));
  put_u32(out, static_cast<std::uint32_t>(n2x));
  put_u32(out, static_cast<std::uint32_t>(n1y));
  put_vec(out, u_scaler.mean);
  put_vec(out, u_scaler.std);
  put_vec(out, y_scaler.mean);
  put_vec(out, y_scaler.std);
  put_vec(out, theta);
  if (!out) throw Error("Checkpoint::save: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Checkpoint::load: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("Checkpoint::load: bad magic in '" + path + "'");
  const auto version = get_u32(in);
  if (version != kVersion)
    throw Error("Checkpoint::load: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.kind = static_cast<ModelKind>(get_u32(in));
  c.lags.n_a = static_cast<int>(get_u32(in));
  c.lags.n_b = static_cast<int>(get_u32(in));
  c.lags.n_u = static_cast<int>(get_u32(in));
  c.lags.n_y = static_cast<int>(get_u32(in));
  c.n1 = static_cast<int>(get_u32(in));
  c.n2 = static_cast<int>(get_u32(in));
  c.n_x = static_cast<int>(get_u32(in));
  c.n1x = static_cast<int>(get_u32(in));
  c.n2x = static_cast<int>(get_u32(in));
  c.n1y = static_cast<int>(get_u32(in));
  c.u_scaler.mean = get_vec(in);
  c.u_scaler.std = get_vec(in);
  c.y_scaler.mean = get_vec(in);
  c.y_scaler.std = get_vec(in);
  c.theta = get_vec(in);
  if (!in) throw Error("Checkpoint::load: truncated file '" + path + "'");
  return c;
}

std::unique_ptr<NarxModel> Checkpoint::make_narx_model() const {
  std::unique_ptr<NarxModel> model;
  if (kind == ModelKind::LinearArx) {
    model = std::make_unique<LinearArx>(lags.feature_size(), lags.n_y);
  } else if (kind == ModelKind::NarxNn) {
    model = std::make_unique<NarxNet>(lags.feature_size(), n1, n2, lags.n_y);
  } else {
    throw Error("Checkpoint: not a NARX model");
  }
  model->set_params(theta);
  return model;
}

std::unique_ptr<StateSpaceModel> Checkpoint::make_ss_model() const {
  if (kind != ModelKind::RnnSs) throw Error("Checkpoint: not a state-space model");
  auto model = std::make_unique<RnnSS>(n_x, lags.n_u, lags.n_y, n1x, n2x, n1y);
  model->set_params(theta);
  return model;
}

}  // namespace alsid
