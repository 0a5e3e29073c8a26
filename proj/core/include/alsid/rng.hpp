#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace alsid {

// Counter-based random stream: every draw is a pure function of
// (key, counter), so streams can be split by name and draws can be
// addressed by index. Two runs with the same seed and stream names
// produce bit-identical sequences regardless of what other streams
// consumed in between.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t base_seed, std::string_view stream_name,
            std::uint64_t stream_index = 0);

  /// Derive an independent child stream.
  RngStream split(std::string_view child_name, std::uint64_t index = 0) const;

  std::uint64_t next_u64() { return at_u64(counter_++); }

  /// Uniform double in [0, 1).
  double uniform() { return to_unit(next_u64()); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal draw (sequential).
  double normal();

  /// Standard normal addressed by index; independent of stream position.
  double normal_at(std::uint64_t index) const;

  /// Uniform in [lo, hi).
  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t at_u64(std::uint64_t counter) const;
  static double to_unit(std::uint64_t bits);

  std::uint64_t key_ = 0x9e3779b97f4a7c15ULL;
  std::uint64_t counter_ = 0;
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  // FNV-1a, then one mixing round.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline RngStream::RngStream(std::uint64_t base_seed, std::string_view stream_name,
                            std::uint64_t stream_index) {
  std::uint64_t k = splitmix64(base_seed);
  k = splitmix64(k ^ hash_name(stream_name));
  key_ = splitmix64(k ^ (0x632be59bd9b4e019ULL * (stream_index + 1)));
}

inline RngStream RngStream::split(std::string_view child_name, std::uint64_t index) const {
  RngStream child;
  std::uint64_t k = splitmix64(key_ ^ hash_name(child_name));
  child.key_ = splitmix64(k ^ (0x632be59bd9b4e019ULL * (index + 1)));
  return child;
}

inline std::uint64_t RngStream::at_u64(std::uint64_t counter) const {
  return splitmix64(key_ ^ (counter * 0xd1342543de82ef95ULL));
}

inline double RngStream::to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  // Lemire reduction; deterministic, bias < 2^-64.
  const std::uint64_t x = next_u64();
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(x) * static_cast<unsigned __int128>(n)) >> 64);
}

namespace detail {
inline double box_muller(double u1, double u2) {
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}
}  // namespace detail

inline double RngStream::normal_at(std::uint64_t index) const {
  // Box-Muller from two addressed uniforms; cosine branch only so that
  // draw i never depends on draw i-1. A stream should be consumed either
  // sequentially or by index, not both.
  return detail::box_muller(to_unit(at_u64(2 * index)), to_unit(at_u64(2 * index + 1)));
}

inline double RngStream::normal() {
  const double u1 = to_unit(at_u64(counter_++));
  const double u2 = to_unit(at_u64(counter_++));
  return detail::box_muller(u1, u2);
}

}  // namespace alsid
