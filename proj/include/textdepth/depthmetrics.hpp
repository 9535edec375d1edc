// Depth normalization, affine (scale/shift) alignment, and the delta1 /
// AbsRel evaluation metrics.
//
// Normalization maps the 2% percentile to -1 and the 98% percentile to +1,
// then clamps to [-1.05, 1.05]. Evaluation is affine-invariant: predictions
// are aligned to ground truth with a fitted (alpha, beta) before scoring,
// L1 (IRLS) by default with a closed-form L2 alternative.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "textdepth/common.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth {

enum class DepthSpace { kMetric, kNormalized };
enum class AlignMethod { kL1, kL2 };

inline std::string to_string(AlignMethod m) { return m == AlignMethod::kL1 ? "L1" : "L2"; }

inline constexpr double kNormalizeClamp = 1.05;
inline constexpr double kIrlsDamping = 1e-8;
inline constexpr int kIrlsMaxRounds = 100;
inline constexpr double kIrlsTolerance = 1e-10;

template <typename T>
struct DepthMap {
  Tensor<T> values;       // HxW
  Tensor<uint8_t> mask;   // HxW, 1 = valid
  DepthSpace space = DepthSpace::kMetric;
};

struct AlignmentResult {
  double alpha = 1.0;
  double beta = 0.0;
  AlignMethod method = AlignMethod::kL1;
  double objective = 0.0;
  int iterations = 0;
};

struct MetricsRecord {
  double delta1_pct = 0.0;
  double absrel = 0.0;
  int64_t valid_px = 0;
  AlignmentResult alignment;
};

template <typename T>
void require_mask_shape(const Tensor<T>& values, const Tensor<uint8_t>& mask) {
  if (values.shape() != mask.shape())
    throw ShapeError("depth values and mask shapes differ");
}

// Linear-interpolated percentile: position p = q*(n-1) over the ascending
// sorted valid values.
template <typename T>
double percentile(const Tensor<T>& values, const Tensor<uint8_t>& mask, double q) {
  require_mask_shape(values, mask);
  if (q < 0.0 || q > 1.0) throw ConfigError("percentile q must be in [0,1]");
  std::vector<double> v;
  v.reserve(static_cast<size_t>(values.numel()));
  for (int64_t i = 0; i < values.numel(); ++i)
    if (mask[i]) v.push_back(static_cast<double>(values[i]));
  if (v.empty()) throw DataError("percentile: empty mask");
  std::sort(v.begin(), v.end());
  const double p = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(p));
  const size_t hi = static_cast<size_t>(std::ceil(p));
  if (lo == hi) return v[lo];
  const double w = p - static_cast<double>(lo);
  return v[lo] * (1.0 - w) + v[hi] * w;
}

template <typename T>
struct NormalizeResult {
  DepthMap<T> normalized;
  double y2 = 0.0;
  double y98 = 0.0;
};

template <typename T>
NormalizeResult<T> normalize_depth(const DepthMap<T>& depth) {
  if (depth.space != DepthSpace::kMetric)
    throw ConfigError("normalize_depth expects a metric depth map");
  const double y2 = percentile(depth.values, depth.mask, 0.02);
  const double y98 = percentile(depth.values, depth.mask, 0.98);
  if (!(y98 > y2))
    throw DataError("normalize_depth: degenerate depth map (y98 == y2 == " +
                    std::to_string(y2) + ")");
  NormalizeResult<T> out;
  out.y2 = y2;
  out.y98 = y98;
  out.normalized.values = Tensor<T>(depth.values.shape());
  out.normalized.mask = depth.mask;
  out.normalized.space = DepthSpace::kNormalized;
  const double inv = 1.0 / (y98 - y2);
  for (int64_t i = 0; i < depth.values.numel(); ++i) {
    double v = ((static_cast<double>(depth.values[i]) - y2) * inv - 0.5) * 2.0;
    v = std::clamp(v, -kNormalizeClamp, kNormalizeClamp);
    out.normalized.values[i] = static_cast<T>(v);
  }
  return out;
}

template <typename T>
DepthMap<T> denormalize(const DepthMap<T>& normalized, double y2, double y98) {
  if (!(y98 > y2)) throw DataError("denormalize: y98 must exceed y2");
  DepthMap<T> out;
  out.values = Tensor<T>(normalized.values.shape());
  out.mask = normalized.mask;
  out.space = DepthSpace::kMetric;
  for (int64_t i = 0; i < normalized.values.numel(); ++i) {
    const double v = static_cast<double>(normalized.values[i]);
    out.values[i] = static_cast<T>((v / 2.0 + 0.5) * (y98 - y2) + y2);
  }
  return out;
}

namespace detail {

// Weighted least squares for alpha*y + beta ~ target; 2x2 normal equations.
struct WlsFit {
  double alpha = 0.0, beta = 0.0;
  bool ok = false;
};

inline WlsFit solve_weighted(const std::vector<double>& y, const std::vector<double>& target,
                             const std::vector<double>& w) {
  double sw = 0, swy = 0, swyy = 0, swt = 0, swyt = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    sw += w[i];
    swy += w[i] * y[i];
    swyy += w[i] * y[i] * y[i];
    swt += w[i] * target[i];
    swyt += w[i] * y[i] * target[i];
  }
  const double det = swyy * sw - swy * swy;
  WlsFit fit;
  if (std::abs(det) <= 1e-300 * std::max(1.0, swyy * sw)) return fit;
  fit.alpha = (swyt * sw - swy * swt) / det;
  fit.beta = (swyy * swt - swy * swyt) / det;
  fit.ok = true;
  return fit;
}

inline double l1_objective(const std::vector<double>& y, const std::vector<double>& target,
                           double alpha, double beta) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += std::abs(alpha * y[i] + beta - target[i]);
  return s / static_cast<double>(y.size());
}

}  // namespace detail

template <typename T>
AlignmentResult align_affine(const Tensor<T>& pred, const Tensor<T>& gt,
                             const Tensor<uint8_t>& mask,
                             AlignMethod method = AlignMethod::kL1) {
  require_mask_shape(pred, mask);
  require_same_shape(pred, gt, "align_affine");
  std::vector<double> y, target;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (!mask[i]) continue;
    y.push_back(static_cast<double>(pred[i]));
    target.push_back(static_cast<double>(gt[i]));
  }
  if (y.size() < 2) throw DataError("align_affine: need at least 2 valid pixels");
  const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
  if (!(*mx > *mn)) throw DataError("align_affine: prediction constant under mask");

  AlignmentResult res;
  res.method = method;

  if (method == AlignMethod::kL2) {
    std::vector<double> w(y.size(), 1.0);
    auto l2 = detail::solve_weighted(y, target, w);
    if (!l2.ok) throw NumericError("align_affine: singular normal equations");
    res.alpha = l2.alpha;
    res.beta = l2.beta;
    double sse = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      const double r = res.alpha * y[i] + res.beta - target[i];
      sse += r * r;
    }
    res.objective = sse / static_cast<double>(y.size());
    return res;
  }

  // Standardize the prediction to zero median and unit MAD before the L1
  // solve. Affine remaps of the input then reduce to (near) bit-identical
  // solver inputs, which keeps the evaluation affine-invariant; the fit is
  // mapped back afterward.
  std::vector<double> sorted = y;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  const double med =
      n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (size_t i = 0; i < n; ++i) sorted[i] = std::abs(y[i] - med);
  std::sort(sorted.begin(), sorted.end());
  double scale = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  if (scale <= 0.0) {
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    scale = 0.5 * (*hi - *lo);
  }
  std::vector<double> ys(n);
  for (size_t i = 0; i < n; ++i) ys[i] = (y[i] - med) / scale;

  std::vector<double> w(n, 1.0);
  auto fit = detail::solve_weighted(ys, target, w);
  if (!fit.ok) throw NumericError("align_affine: singular normal equations");
  res.alpha = fit.alpha;
  res.beta = fit.beta;

  // IRLS for the L1 objective, seeded with the L2 solution. The best
  // (alpha, beta) seen is tracked, so the reported objective is non-
  // increasing over rounds even when a damped step overshoots.
  double obj = detail::l1_objective(ys, target, res.alpha, res.beta);
  double cur_alpha = res.alpha, cur_beta = res.beta;
  for (int round = 0; round < kIrlsMaxRounds; ++round) {
    for (size_t i = 0; i < n; ++i) {
      const double r = std::abs(cur_alpha * ys[i] + cur_beta - target[i]);
      w[i] = 1.0 / std::max(r, kIrlsDamping);
    }
    fit = detail::solve_weighted(ys, target, w);
    if (!fit.ok) break;
    const double delta =
        std::max(std::abs(fit.alpha - cur_alpha), std::abs(fit.beta - cur_beta));
    cur_alpha = fit.alpha;
    cur_beta = fit.beta;
    const double cand = detail::l1_objective(ys, target, cur_alpha, cur_beta);
    res.iterations = round + 1;
    if (cand <= obj) {
      res.alpha = cur_alpha;
      res.beta = cur_beta;
      obj = cand;
    }
    if (delta < kIrlsTolerance) break;
  }

  // Exact coordinate polish: for a fixed alpha the optimal beta is the
  // median of the residuals, and for a fixed beta the optimal alpha is the
  // |y|-weighted median of (target - beta)/y. Each step solves its 1-D LAD
  // subproblem exactly, so the objective cannot increase. Steps are only
  // taken for material improvements.
  std::vector<std::pair<double, double>> ratios;
  std::vector<double> residuals(n);
  for (int polish = 0; polish < 20; ++polish) {
    for (size_t i = 0; i < n; ++i) residuals[i] = target[i] - res.alpha * ys[i];
    std::sort(residuals.begin(), residuals.end());
    const double beta_med = n % 2 ? residuals[n / 2]
                                  : 0.5 * (residuals[n / 2 - 1] + residuals[n / 2]);
    ratios.clear();
    double total_w = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (ys[i] == 0.0) continue;
      ratios.emplace_back((target[i] - beta_med) / ys[i], std::abs(ys[i]));
      total_w += std::abs(ys[i]);
    }
    double alpha_med = res.alpha;
    if (!ratios.empty()) {
      std::sort(ratios.begin(), ratios.end());
      double acc = 0.0;
      for (const auto& [r, weight] : ratios) {
        acc += weight;
        if (acc >= 0.5 * total_w) {
          alpha_med = r;
          break;
        }
      }
    }
    bool improved = false;
    const double margin = 1e-7 * std::max(1.0, obj);
    for (const auto& [a_cand, b_cand] :
         {std::pair{res.alpha, beta_med}, std::pair{alpha_med, beta_med}}) {
      const double cand = detail::l1_objective(ys, target, a_cand, b_cand);
      if (cand < obj - margin) {
        res.alpha = a_cand;
        res.beta = b_cand;
        obj = cand;
        improved = true;
      }
    }
    if (!improved) break;
  }
  // map the standardized fit back to the original prediction scale
  const double alpha_std = res.alpha;
  res.alpha = alpha_std / scale;
  res.beta = res.beta - alpha_std * med / scale;
  res.objective = obj;
  return res;
}

// Percentage of valid pixels with max(pred/gt, gt/pred) strictly below 1.25.
// Non-positive aligned predictions count as failures.
template <typename T>
double delta1(const Tensor<T>& pred_aligned, const Tensor<T>& gt,
              const Tensor<uint8_t>& mask) {
  require_mask_shape(pred_aligned, mask);
  require_same_shape(pred_aligned, gt, "delta1");
  int64_t valid = 0, hits = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (!mask[i]) continue;
    ++valid;
    const double p = static_cast<double>(pred_aligned[i]);
    const double g = static_cast<double>(gt[i]);
    if (p <= 0.0 || g <= 0.0) continue;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++hits;
  }
  if (valid == 0) throw DataError("delta1: empty mask");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(valid);
}

// Mean of |gt - pred| / gt over valid pixels.
template <typename T>
double absrel(const Tensor<T>& pred_aligned, const Tensor<T>& gt,
              const Tensor<uint8_t>& mask) {
  require_mask_shape(pred_aligned, mask);
  require_same_shape(pred_aligned, gt, "absrel");
  int64_t valid = 0;
  double sum = 0.0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (!mask[i]) continue;
    const double g = static_cast<double>(gt[i]);
    if (!(g > 0.0)) throw DataError("absrel: ground truth must be positive under mask");
    sum += std::abs(g - static_cast<double>(pred_aligned[i])) / g;
    ++valid;
  }
  if (valid == 0) throw DataError("absrel: empty mask");
  return sum / static_cast<double>(valid);
}

// Align a relative prediction to metric ground truth, then score it.
template <typename T>
MetricsRecord evaluate_pair(const Tensor<T>& pred_relative, const Tensor<T>& gt_metric,
                            const Tensor<uint8_t>& mask,
                            AlignMethod method = AlignMethod::kL1) {
  MetricsRecord rec;
  rec.alignment = align_affine(pred_relative, gt_metric, mask, method);
  Tensor<T> aligned(pred_relative.shape());
  for (int64_t i = 0; i < pred_relative.numel(); ++i)
    aligned[i] = static_cast<T>(rec.alignment.alpha * static_cast<double>(pred_relative[i]) +
                                rec.alignment.beta);
  rec.delta1_pct = delta1(aligned, gt_metric, mask);
  rec.absrel = absrel(aligned, gt_metric, mask);
  for (int64_t i = 0; i < mask.numel(); ++i) rec.valid_px += mask[i] ? 1 : 0;
  return rec;
}

}  // namespace textdepth
