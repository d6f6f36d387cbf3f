#ifndef SON_RNG_HPP
#define SON_RNG_HPP

#include <cstdint>
#include <random>

#include "son/tensor.hpp"

namespace son {

namespace detail {
// splitmix64 finalizer; used to derive well-separated stream keys.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Deterministic random stream keyed by a 64-bit path. Substreams are derived
/// from the parent's key, not its state, so any (seed, path) pair names the
/// same stream regardless of draw order elsewhere.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key), eng_(detail::mix64(key)) {}

  std::uint64_t key() const { return key_; }

  RandomStream substream(std::uint64_t a) const {
    return RandomStream(detail::mix64(key_ ^ detail::mix64(a)));
  }
  RandomStream substream(std::uint64_t a, std::uint64_t b) const {
    return substream(a).substream(b);
  }
  RandomStream substream(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return substream(a).substream(b).substream(c);
  }

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }                      // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }

  void fill_normal(Tensor& t, double mean = 0.0, double std = 1.0) {
    for (int i = 0; i < t.size(); ++i) t[i] = mean + std * normal();
  }
  void fill_uniform(Tensor& t, double lo, double hi) {
    for (int i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Fixed stream tags; keeps the (seed, purpose) -> stream map in one place.
namespace stream_tag {
inline constexpr std::uint64_t kData = 0x01;
inline constexpr std::uint64_t kNoise = 0x02;
inline constexpr std::uint64_t kQuery = 0x03;
inline constexpr std::uint64_t kInit = 0x04;
inline constexpr std::uint64_t kTrain = 0x05;
inline constexpr std::uint64_t kDiag = 0x06;
}  // namespace stream_tag

}  // namespace son

#endif  // SON_RNG_HPP
