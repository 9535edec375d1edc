// Independent oracles used by the test suites and the `selftest` command.
//
// Everything here is deliberately re-derived from the defining formulas and
// stays independent of the implementation paths it checks: metrics are
// recomputed directly from their definitions, the L1 alignment oracle is a
// brute-force grid minimum, and gradients are checked against central finite
// differences.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "textdepth/denoiser.hpp"
#include "textdepth/depthmetrics.hpp"
#include "textdepth/rng.hpp"
#include "textdepth/schedule.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth::oracle {

// delta1 re-stated from the definition: % of valid pixels with
// max(pred/gt, gt/pred) strictly below 1.25.
template <typename T>
double delta1_direct(const Tensor<T>& pred, const Tensor<T>& gt,
                     const Tensor<uint8_t>& mask) {
  int64_t n = 0, hit = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (!mask[i]) continue;
    ++n;
    const double p = static_cast<double>(pred[i]);
    const double g = static_cast<double>(gt[i]);
    if (p > 0.0 && g > 0.0 && std::max(p / g, g / p) < 1.25) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

// AbsRel re-stated from the definition: mean |gt - pred| / gt.
template <typename T>
double absrel_direct(const Tensor<T>& pred, const Tensor<T>& gt,
                     const Tensor<uint8_t>& mask) {
  int64_t n = 0;
  double s = 0.0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (!mask[i]) continue;
    s += std::abs(static_cast<double>(gt[i]) - static_cast<double>(pred[i])) /
         static_cast<double>(gt[i]);
    ++n;
  }
  return s / static_cast<double>(n);
}

inline double l1_mean_objective(const std::vector<double>& y, const std::vector<double>& t,
                                double alpha, double beta) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += std::abs(alpha * y[i] + beta - t[i]);
  return s / static_cast<double>(y.size());
}

// Exact minimum of the mean-L1 objective over the grid
// alpha in [alpha_lo, alpha_hi], beta in [beta_lo, beta_hi] at `step`
// resolution. For each grid alpha the objective is convex piecewise-linear
// in beta with minimizers forming an interval around the median of the
// residuals, so only the grid points bracketing that interval (clamped to
// the box) need evaluating; this equals the full 2-D sweep.
inline double l1_grid_minimum(const std::vector<double>& y, const std::vector<double>& t,
                              double alpha_lo = -5.0, double alpha_hi = 5.0,
                              double beta_lo = -10.0, double beta_hi = 10.0,
                              double step = 1e-3) {
  const int na = static_cast<int>(std::lround((alpha_hi - alpha_lo) / step));
  const int nb = static_cast<int>(std::lround((beta_hi - beta_lo) / step));
  std::vector<double> c(y.size());
  double best = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia <= na; ++ia) {
    const double alpha = alpha_lo + step * ia;
    for (size_t i = 0; i < y.size(); ++i) c[i] = t[i] - alpha * y[i];
    std::vector<double> sorted = c;
    const size_t n = sorted.size();
    std::nth_element(sorted.begin(), sorted.begin() + (n - 1) / 2, sorted.end());
    const double med_lo = sorted[(n - 1) / 2];
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double med_hi = sorted[n / 2];
    auto grid_index = [&](double b) {
      return std::clamp(static_cast<long>(std::floor((b - beta_lo) / step)), 0L,
                        static_cast<long>(nb));
    };
    const long i_lo = grid_index(med_lo);
    const long i_hi = grid_index(med_hi);
    for (long ib : {i_lo - 1, i_lo, i_lo + 1, i_hi, i_hi + 1}) {
      if (ib < 0 || ib > nb) continue;
      const double beta = beta_lo + step * ib;
      best = std::min(best, l1_mean_objective(y, t, alpha, beta));
    }
  }
  return best;
}

// Central finite differences on a scalar function of named parameter
// tensors. Relative error uses max(|analytic|, |numeric|, floor) as the
// denominator so exactly-zero gradients compare cleanly.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  int64_t worst_index = -1;
};

inline GradCheckReport finite_difference_check(
    std::map<std::string, Tensor<double>>& params,
    const std::function<double()>& loss,
    const std::map<std::string, Tensor<double>>& analytic, double h = 1e-5,
    double denom_floor = 1e-7) {
  GradCheckReport report;
  for (auto& [name, tensor] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end())
      throw std::runtime_error("gradient check: missing analytic tensor " + name);
    for (int64_t i = 0; i < tensor.numel(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + h;
      const double up = loss();
      tensor[i] = saved - h;
      const double down = loss();
      tensor[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = it->second[i];
      const double rel = std::abs(an - fd) /
                         std::max({std::abs(an), std::abs(fd), denom_floor});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

// --- selftest runner ---------------------------------------------------------

namespace detail {

inline Tensor<double> randn(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<double> t(std::move(shape));
  RngStream r(seed);
  r.fill_gaussian<double>(t.data());
  return t;
}

inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300}) ||
         std::abs(a - b) <= 1e-12;
}

}  // namespace detail

inline bool check_schedule_identities(double tol = 1e-10) {
  for (int steps : {2, 200, 1000}) {
    const auto s = make_schedule(steps);
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
      prod *= 1.0 - s.beta(t);
      if (!detail::close_rel(s.alpha_bar(t), prod, 1e-12)) return false;
    }
    auto z0 = detail::randn({2, 2, 4}, 17 + static_cast<uint64_t>(steps));
    auto eps = detail::randn({2, 2, 4}, 31 + static_cast<uint64_t>(steps));
    for (int t : {1, std::max(1, steps / 2), steps}) {
      auto zt = marginal_sample(z0, t, eps, s);
      auto v = v_target(z0, eps, t, s);
      auto eps_back = eps_from_v(v, zt, t, s);
      auto x0v = x0_from_v(v, zt, t, s);
      auto x0e = x0_from_eps(eps, zt, t, s);
      for (int64_t i = 0; i < z0.numel(); ++i) {
        if (!detail::close_rel(eps_back[i], eps[i], tol)) return false;
        if (!detail::close_rel(x0v[i], z0[i], tol)) return false;
        if (!detail::close_rel(x0e[i], z0[i], tol)) return false;
      }
    }
    // DDIM with the true eps follows the closed-form marginal
    const auto grid = make_ddim_subsequence(steps, std::min(steps, 25));
    Tensor<double> z = marginal_sample(z0, grid.front(), eps, s);
    for (size_t k = 0; k < grid.size(); ++k) {
      const int t = grid[k];
      const int t_prev = k + 1 < grid.size() ? grid[k + 1] : 0;
      z = ddim_step(z, eps, t, t_prev, s);
      auto expect = t_prev == 0 ? z0 : marginal_sample(z0, t_prev, eps, s);
      for (int64_t i = 0; i < z.numel(); ++i)
        if (!detail::close_rel(z[i], expect[i], tol)) return false;
    }
  }
  return true;
}

inline bool check_tiny_gradients(double tol = 1e-4) {
  DenoiserConfig cfg;
  cfg.base_width = 4;
  cfg.level_widths = {4, 8};
  cfg.groups = 2;
  cfg.token_dim = 8;
  cfg.max_tokens = 4;
  cfg.heads = 2;
  cfg.vocab_size = 8;
  cfg.time_dim = 8;
  RngStream rng(5);
  auto params = init_parameters<double>(cfg, rng);
  RngStream wrng(6);
  for (auto& [name, t] : params)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = wrng.truncated_gaussian(0.25);
  auto z = detail::randn({4, 4, 4}, 7);
  auto x = detail::randn({4, 4, 12}, 8);
  TokenSequence tok;
  tok.ids = {2, 3, 4, kPadId};
  tok.attention = {1, 1, 1, 0};
  Tensor<double> target({4, 4, 4});
  {
    DenoiserCache<double> warm;
    auto y0 = denoiser_forward(params, cfg, z, x, 3, tok, warm);
    RngStream tr(9);
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = y0[i] - 0.03 * tr.gaussian();
  }
  auto loss = [&]() {
    DenoiserCache<double> cache;
    auto y = denoiser_forward(params, cfg, z, x, 3, tok, cache);
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) {
      const double d = y[i] - target[i];
      s += d * d;
    }
    return s;
  };
  DenoiserCache<double> cache;
  auto y = denoiser_forward(params, cfg, z, x, 3, tok, cache);
  Tensor<double> dy(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) dy[i] = 2.0 * (y[i] - target[i]);
  auto grads = zeros_like(params);
  denoiser_backward(params, cfg, cache, dy, grads);
  const auto report = finite_difference_check(params, loss, grads);
  return report.max_rel_error < tol;
}

inline bool check_alignment_vs_grid(int instances = 5) {
  RngStream r(88);
  for (int inst = 0; inst < instances; ++inst) {
    const int n = 200;
    std::vector<double> yv(n), tv(n);
    Tensor<double> y({n}), gt({n});
    Tensor<uint8_t> m({n});
    m.fill(1);
    const double a = r.uniform(-2, 2), b = r.uniform(-3, 3);
    for (int i = 0; i < n; ++i) {
      yv[i] = r.uniform(-2, 2);
      tv[i] = a * yv[i] + b + (r.uniform() < 0.2 ? r.gaussian() * 2.0 : r.gaussian() * 0.05);
      y[i] = yv[i];
      gt[i] = tv[i];
    }
    const auto fit = align_affine(y, gt, m, AlignMethod::kL1);
    if (fit.objective > l1_grid_minimum(yv, tv) + 1e-6) return false;
  }
  return true;
}

inline bool check_metrics_vs_definition(int trials = 200) {
  RngStream r(99);
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 4 + static_cast<int>(r.bounded(30));
    Tensor<double> gt({n}), pred({n});
    Tensor<uint8_t> m({n});
    int valid = 0;
    for (int i = 0; i < n; ++i) {
      gt[i] = r.uniform(0.2, 10.0);
      pred[i] = r.uniform(-1.0, 12.0);
      m[i] = r.uniform() < 0.8 ? 1 : 0;
      valid += m[i];
    }
    if (valid == 0) m[0] = 1;
    if (delta1(pred, gt, m) != delta1_direct(pred, gt, m)) return false;
    if (absrel(pred, gt, m) != absrel_direct(pred, gt, m)) return false;
  }
  return true;
}

// Runs the oracle suites and prints one pass/fail line each.
inline bool run_selftest(std::ostream& out) {
  bool all = true;
  auto report = [&](const char* name, bool ok) {
    out << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    all = all && ok;
  };
  report("schedule identities (alpha-bar, eps/v/x0 round trips, DDIM oracle)",
         check_schedule_identities());
  report("gradient check on tiny network vs finite differences", check_tiny_gradients());
  report("L1 alignment vs brute-force grid oracle", check_alignment_vs_grid());
  report("delta1/AbsRel vs direct-definition oracle", check_metrics_vs_definition());
  return all;
}

}  // namespace textdepth::oracle
