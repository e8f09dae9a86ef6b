#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "dcrec/linalg.hpp"

namespace dcrec {

// Reference ladder length for rescaled beta bounds; see rescaled_beta_bounds.
inline constexpr int kReferenceSteps = 1000;

// Noise schedule for the forward diffusion process.
//
// beta[i] is the variance added at step t = i + 1 (steps are 1-based).
// alpha[i] = 1 - beta[i]. alpha_bar has length T + 1 with alpha_bar[0] = 1 and
// alpha_bar[t] = alpha_bar[t - 1] * alpha[t - 1], so t = 0 is an identity.
struct NoiseSchedule {
  int num_steps = 0;  // T
  Vector beta;
  Vector alpha;
  Vector alpha_bar;

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
};

// Linear interpolation of per-step variances from beta_min to beta_max.
inline NoiseSchedule build_schedule(int num_steps, double beta_min, double beta_max) {
  if (num_steps < 1) throw std::invalid_argument("build_schedule: num_steps must be >= 1");
  if (!(beta_min > 0.0 && beta_max < 1.0))
    throw std::invalid_argument("build_schedule: beta bounds must lie in (0, 1)");
  if (beta_min > beta_max)
    throw std::invalid_argument("build_schedule: beta_min must not exceed beta_max");

  NoiseSchedule s;
  s.num_steps = num_steps;
  s.beta.resize(num_steps);
  s.alpha.resize(num_steps);
  s.alpha_bar.resize(num_steps + 1);
  s.alpha_bar[0] = 1.0;
  for (int i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i + 1] = s.alpha_bar[i] * s.alpha[i];
  }
  return s;
}

// Scales reference beta bounds (stated for a kReferenceSteps ladder) to a
// schedule with num_steps steps, preserving the total noise budget so that
// alpha_bar[T] stays near zero for short schedules.
inline std::pair<double, double> rescaled_beta_bounds(int num_steps, double ref_min,
                                                      double ref_max) {
  const double scale = static_cast<double>(kReferenceSteps) / num_steps;
  return {ref_min * scale, ref_max * scale};
}

inline NoiseSchedule build_schedule(int num_steps, double beta_min, double beta_max,
                                    bool rescale_bounds) {
  if (rescale_bounds) {
    auto [lo, hi] = rescaled_beta_bounds(num_steps, beta_min, beta_max);
    return build_schedule(num_steps, lo, hi);
  }
  return build_schedule(num_steps, beta_min, beta_max);
}

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

// One forward transition: sqrt(alpha_t) * S_{t-1} + sqrt(beta_t) * noise.
inline Matrix forward_step(const Matrix& s_prev, int t, const NoiseSchedule& sched,
                           const Matrix& noise) {
  if (t < 1 || t > sched.num_steps)
    throw std::out_of_range("forward_step: t out of range");
  check_same_shape(s_prev, noise, "forward_step");
  return std::sqrt(sched.alpha_at(t)) * s_prev + std::sqrt(sched.beta_at(t)) * noise;
}

// Closed-form marginal: sqrt(alpha_bar_t) * S_0 + sqrt(1 - alpha_bar_t) * noise.
// t = 0 returns S_0 unchanged.
inline Matrix forward_marginal(const Matrix& s0, int t, const NoiseSchedule& sched,
                               const Matrix& noise) {
  if (t < 0 || t > sched.num_steps)
    throw std::out_of_range("forward_marginal: t out of range");
  if (t == 0) return s0;
  check_same_shape(s0, noise, "forward_marginal");
  const double ab = sched.alpha_bar[t];
  return std::sqrt(ab) * s0 + std::sqrt(1.0 - ab) * noise;
}

}  // namespace dcrec
