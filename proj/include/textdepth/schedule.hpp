// Noise schedules and diffusion-process math.
//
// Forward marginal:  z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps
// v parameterization: v = sqrt(abar_t) eps - sqrt(1 - abar_t) z_0
// Reverse DDPM step (deterministic, as used here):
//   z_{t-1} = (z_t - (1 - alpha_t)/sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)
// DDIM step (eta = 0): predict z0 from eps_hat, re-noise to t_prev; abar_0 = 1.
//
// Tables are kept in float64; applying an op to a Tensor<T> casts the scalar
// coefficients to T.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "textdepth/common.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth {

enum class ScheduleKind { kLinear, kScaledLinear };

inline std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kLinear ? "linear" : "scaled-linear";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "scaled-linear" || s == "scaled_linear") return ScheduleKind::kScaledLinear;
  throw ConfigError("unknown schedule kind: " + s);
}

// Beta endpoints for the scaled-linear default schedule.
inline constexpr double kDefaultBetaStart = 8.5e-4;
inline constexpr double kDefaultBetaEnd = 1.2e-2;
inline constexpr int kDefaultTrainSteps = 200;

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }

  double beta(int t) const { return betas_.at(check_t(t) - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }

  // alpha_bar(0) == 1 by definition.
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_.at(check_t(t) - 1);
  }
  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
  double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  friend NoiseSchedule make_schedule(int, ScheduleKind, double, double);

 private:
  size_t check_t(int t) const {
    if (t < 1 || t > steps())
      throw ConfigError("timestep " + std::to_string(t) + " outside 1.." +
                        std::to_string(steps()));
    return static_cast<size_t>(t);
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  ScheduleKind kind_ = ScheduleKind::kScaledLinear;
};

inline NoiseSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::kScaledLinear,
                                   double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("beta endpoints must satisfy 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.kind_ = kind;
  s.betas_.resize(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    if (kind == ScheduleKind::kLinear) {
      s.betas_[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
    } else {
      const double r = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * frac;
      s.betas_[static_cast<size_t>(t)] = r * r;
    }
  }
  s.alpha_bars_.resize(static_cast<size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    prod *= 1.0 - s.betas_[static_cast<size_t>(t)];
    s.alpha_bars_[static_cast<size_t>(t)] = prod;
  }
  return s;
}

template <typename T>
Tensor<T> marginal_sample(const Tensor<T>& z0, int t, const Tensor<T>& eps,
                          const NoiseSchedule& s) {
  require_same_shape(z0, eps, "marginal_sample");
  const T sa = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  Tensor<T> out(z0.shape());
  for (int64_t i = 0; i < z0.numel(); ++i) out[i] = sa * z0[i] + sb * eps[i];
  return out;
}

template <typename T>
Tensor<T> v_target(const Tensor<T>& z0, const Tensor<T>& eps, int t,
                   const NoiseSchedule& s) {
  require_same_shape(z0, eps, "v_target");
  const T sa = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  Tensor<T> out(z0.shape());
  for (int64_t i = 0; i < z0.numel(); ++i) out[i] = sa * eps[i] - sb * z0[i];
  return out;
}

template <typename T>
Tensor<T> eps_from_v(const Tensor<T>& v, const Tensor<T>& z_t, int t,
                     const NoiseSchedule& s) {
  require_same_shape(v, z_t, "eps_from_v");
  const T sa = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  Tensor<T> out(v.shape());
  for (int64_t i = 0; i < v.numel(); ++i) out[i] = sa * v[i] + sb * z_t[i];
  return out;
}

template <typename T>
Tensor<T> x0_from_v(const Tensor<T>& v, const Tensor<T>& z_t, int t,
                    const NoiseSchedule& s) {
  require_same_shape(v, z_t, "x0_from_v");
  const T sa = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  Tensor<T> out(v.shape());
  for (int64_t i = 0; i < v.numel(); ++i) out[i] = sa * z_t[i] - sb * v[i];
  return out;
}

template <typename T>
Tensor<T> x0_from_eps(const Tensor<T>& eps, const Tensor<T>& z_t, int t,
                      const NoiseSchedule& s) {
  require_same_shape(eps, z_t, "x0_from_eps");
  const T sa = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  Tensor<T> out(eps.shape());
  for (int64_t i = 0; i < eps.numel(); ++i) out[i] = (z_t[i] - sb * eps[i]) / sa;
  return out;
}

template <typename T>
Tensor<T> ddpm_reverse_step(const Tensor<T>& z_t, const Tensor<T>& eps_hat, int t,
                            const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "ddpm_reverse_step");
  const double alpha = s.alpha(t);
  if (alpha >= 1.0) return z_t;  // beta == 0: the step is the identity
  const T coef = static_cast<T>((1.0 - alpha) / s.sqrt_one_minus_alpha_bar(t));
  const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(alpha));
  Tensor<T> out(z_t.shape());
  for (int64_t i = 0; i < z_t.numel(); ++i)
    out[i] = inv_sqrt_alpha * (z_t[i] - coef * eps_hat[i]);
  return out;
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_hat, int t, int t_prev,
                    const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "ddim_step");
  if (t_prev >= t)
    throw ConfigError("ddim_step: t_prev " + std::to_string(t_prev) +
                      " must be below t " + std::to_string(t));
  if (t_prev < 0) throw ConfigError("ddim_step: t_prev must be >= 0");
  const T sa_t = static_cast<T>(s.sqrt_alpha_bar(t));
  const T sb_t = static_cast<T>(s.sqrt_one_minus_alpha_bar(t));
  const T sa_p = static_cast<T>(s.sqrt_alpha_bar(t_prev));
  const T sb_p = static_cast<T>(s.sqrt_one_minus_alpha_bar(t_prev));
  Tensor<T> out(z_t.shape());
  for (int64_t i = 0; i < z_t.numel(); ++i) {
    const T x0 = (z_t[i] - sb_t * eps_hat[i]) / sa_t;
    out[i] = sa_p * x0 + sb_p * eps_hat[i];
  }
  return out;
}

struct ScheduleSpec {
  int steps = kDefaultTrainSteps;
  ScheduleKind kind = ScheduleKind::kScaledLinear;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;

  NoiseSchedule make() const { return make_schedule(steps, kind, beta_start, beta_end); }
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

// DDIM timestep grid: t_k = round(k * T / S) for k = S..1, deduplicated,
// strictly decreasing, starting at T.
inline std::vector<int> make_ddim_subsequence(int total_steps, int sample_steps) {
  if (sample_steps < 1) throw ConfigError("sampling steps must be >= 1");
  if (sample_steps > total_steps)
    throw ConfigError("sampling steps " + std::to_string(sample_steps) +
                      " exceed schedule steps " + std::to_string(total_steps));
  std::vector<int> steps;
  for (int k = sample_steps; k >= 1; --k) {
    const int t = static_cast<int>(std::lround(
        static_cast<double>(k) * total_steps / sample_steps));
    if (t >= 1 && (steps.empty() || t < steps.back())) steps.push_back(t);
  }
  return steps;
}

}  // namespace textdepth
