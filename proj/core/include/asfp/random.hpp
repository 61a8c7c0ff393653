#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "asfp/tensor.hpp"

namespace asfp {

// Deterministic random source. std::mt19937 output is pinned by the
// standard; the distributions here are hand-rolled so the stream does not
// depend on the standard library implementation.
class Rng {
public:
  explicit Rng(std::uint32_t seed) : gen_(seed) {}

  std::uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_()) * 0x1p-32; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<std::uint32_t>(n));
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(gen_()) + 1.0) * 0x1p-32;
    const double u2 = static_cast<double>(gen_()) * 0x1p-32;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean, double stddev) {
    for (auto& v : t.values()) v = static_cast<T>(mean + stddev * normal());
  }

  // Fisher-Yates; independent of std::shuffle's unspecified draw pattern.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace asfp
