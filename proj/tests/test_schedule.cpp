#include <cmath>

#include "asfp/prune.hpp"
#include "doctest.h"

using namespace asfp;

namespace {

// Independent re-derivation of u = k*epoch_max: dense scan + refinement of
// (1 - e^{-u*D}) / (1 - e^{-u}) = rho, kept deliberately different from the
// library's bisection.
double oracle_u(double goal, double min_rate, double decay) {
  const double rho = (0.75 * goal - min_rate) / (goal - min_rate);
  auto g = [&](double u) { return (1.0 - std::exp(-u * decay)) / (1.0 - std::exp(-u)); };
  double best = 1e-6, step = 1e-3;
  double u = 1e-6;
  double best_err = 1e9;
  for (; u < 100.0; u += step) {
    const double err = std::abs(g(u) - rho);
    if (err < best_err) {
      best_err = err;
      best = u;
    }
  }
  for (double refine = step; refine > 1e-10; refine *= 0.5) {
    for (double cand : {best - refine, best + refine}) {
      if (cand <= 0.0) continue;
      if (std::abs(g(cand) - rho) < best_err) {
        best_err = std::abs(g(cand) - rho);
        best = cand;
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("schedule anchors for the 0.3/200 configuration") {
  const PruneSchedule s = solve_schedule(0.3, 0.0, 1.0 / 8.0, 200);
  CHECK(std::abs(rate_at(s, 0) - 0.0) < 1e-9);
  CHECK(std::abs(rate_at(s, 25) - 0.225) < 1e-9);
  CHECK(std::abs(rate_at(s, 200) - 0.3) < 1e-9);
}

TEST_CASE("solved exponent matches an independent oracle") {
  const PruneSchedule s = solve_schedule(0.3, 0.0, 1.0 / 8.0, 200);
  const double u = s.k * 200.0;
  CHECK(std::abs(u - oracle_u(0.3, 0.0, 1.0 / 8.0)) < 1e-6);
  CHECK(std::abs(u - 11.09) < 0.02);
}

TEST_CASE("rate is nondecreasing and clamped") {
  const PruneSchedule s = solve_schedule(0.3, 0.0, 1.0 / 8.0, 200);
  double prev = -1.0;
  for (int e = 0; e <= 200; ++e) {
    const double r = rate_at(s, e);
    CHECK(r >= prev);
    CHECK(r >= 0.0);
    CHECK(r <= 0.3);
    prev = r;
  }
}

TEST_CASE("min == goal collapses to the constant schedule") {
  const PruneSchedule s = solve_schedule(0.3, 0.3, 1.0 / 8.0, 50);
  CHECK(s.constant);
  for (int e = 0; e <= 50; e += 10) CHECK(rate_at(s, e) == 0.3);
}

TEST_CASE("schedule errors") {
  // Midpoint anchor below the start: no exponential rise fits.
  CHECK_THROWS_AS(solve_schedule(0.3, 0.25, 1.0 / 8.0, 100), config_error);
  CHECK_THROWS_AS(solve_schedule(1.0, 0.0, 1.0 / 8.0, 100), config_error);
  CHECK_THROWS_AS(solve_schedule(0.3, 0.0, 0.0, 100), config_error);
  CHECK_THROWS_AS(solve_schedule(0.3, 0.0, 1.0 / 8.0, 0), config_error);
  // rho below the anchor curve's reachable range: bracket failure.
  CHECK_THROWS_AS(solve_schedule(0.3, 0.0, 0.8, 100), numeric_error);

  const PruneSchedule s = solve_schedule(0.3, 0.0, 1.0 / 8.0, 100);
  CHECK_THROWS_AS(rate_at(s, -1), index_error);
  CHECK_THROWS_AS(rate_at(s, 101), index_error);
}

TEST_CASE("num_to_prune floors and never takes a whole layer") {
  CHECK(num_to_prune(64, 0.225) == 14);
  CHECK(num_to_prune(64, 0.0) == 0);
  CHECK(num_to_prune(16, 0.3) == 4);
  CHECK(num_to_prune(16, 0.999) == 15);
  CHECK_THROWS_AS(num_to_prune(0, 0.3), config_error);
  CHECK_THROWS_AS(num_to_prune(16, 1.0), config_error);
  CHECK_THROWS_AS(num_to_prune(16, -0.1), config_error);
}
