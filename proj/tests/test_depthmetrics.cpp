#include <catch2/catch_amalgamated.hpp>

#include "textdepth/depthmetrics.hpp"
#include "textdepth/rng.hpp"
#include "textdepth/selftest.hpp"

using namespace textdepth;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor<uint8_t> ones_like_shape(const std::vector<int64_t>& shape) {
  Tensor<uint8_t> m(shape);
  m.fill(1);
  return m;
}

// 51 values 0, 2, 4, ..., 100
Tensor<double> ramp51() {
  Tensor<double> t({51});
  for (int64_t i = 0; i < 51; ++i) t[i] = 2.0 * static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("percentile endpoints and interpolation", "[metrics]") {
  auto v = ramp51();
  auto m = ones_like_shape({51});
  REQUIRE(percentile(v, m, 0.0) == 0.0);
  REQUIRE(percentile(v, m, 1.0) == 100.0);
  REQUIRE_THAT(percentile(v, m, 0.02), WithinAbs(2.0, 1e-12));
  REQUIRE_THAT(percentile(v, m, 0.98), WithinAbs(98.0, 1e-12));

  Tensor<double> two({2});
  two[0] = 1.0;
  two[1] = 2.0;
  auto m2 = ones_like_shape({2});
  REQUIRE_THAT(percentile(two, m2, 0.5), WithinAbs(1.5, 1e-15));
}

TEST_CASE("percentile rejects empty masks", "[metrics]") {
  Tensor<double> v({4});
  Tensor<uint8_t> m({4});
  REQUIRE_THROWS_AS(percentile(v, m, 0.5), DataError);
}

TEST_CASE("normalize maps the percentile band onto [-1, 1]", "[metrics]") {
  DepthMap<double> d;
  d.values = ramp51();
  d.mask = ones_like_shape({51});
  auto res = normalize_depth(d);
  REQUIRE_THAT(res.y2, WithinAbs(2.0, 1e-12));
  REQUIRE_THAT(res.y98, WithinAbs(98.0, 1e-12));
  // index of value 50 is 25; value 2 is index 1; value 98 is index 49
  REQUIRE_THAT(res.normalized.values[25], WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(res.normalized.values[1], WithinAbs(-1.0, 1e-12));
  REQUIRE_THAT(res.normalized.values[49], WithinAbs(1.0, 1e-12));
  // value 0 maps to -1.041666..., inside the clamp band, kept as-is
  REQUIRE_THAT(res.normalized.values[0], WithinAbs(-1.0416666666666667, 1e-12));
  REQUIRE(res.normalized.space == DepthSpace::kNormalized);
}

TEST_CASE("normalize clamps extreme outliers to +/-1.05", "[metrics]") {
  DepthMap<double> d;
  d.values = Tensor<double>({200});
  d.mask = ones_like_shape({200});
  for (int64_t i = 0; i < 200; ++i) d.values[i] = static_cast<double>(i);
  d.values[0] = -500.0;
  d.values[199] = 5000.0;
  auto res = normalize_depth(d);
  REQUIRE(res.normalized.values[0] == -1.05);
  REQUIRE(res.normalized.values[199] == 1.05);
}

TEST_CASE("normalize rejects constant maps", "[metrics]") {
  DepthMap<double> d;
  d.values = Tensor<double>::full({10}, 4.0);
  d.mask = ones_like_shape({10});
  REQUIRE_THROWS_AS(normalize_depth(d), DataError);
}

TEST_CASE("denormalize inverts normalize off the clamp", "[metrics]") {
  DepthMap<double> d;
  d.values = Tensor<double>({64});
  d.mask = ones_like_shape({64});
  RngStream r(9);
  for (int64_t i = 0; i < 64; ++i) d.values[i] = r.uniform(1.0, 9.0);
  auto res = normalize_depth(d);
  bool clamped = false;
  for (int64_t i = 0; i < 64; ++i)
    if (std::abs(res.normalized.values[i]) >= kNormalizeClamp) clamped = true;
  REQUIRE_FALSE(clamped);
  auto back = denormalize(res.normalized, res.y2, res.y98);
  for (int64_t i = 0; i < 64; ++i)
    REQUIRE_THAT(back.values[i], WithinRel(d.values[i], 1e-12));

  DepthMap<double> probe;
  probe.values = Tensor<double>({3});
  probe.values[0] = 0.0;
  probe.values[1] = -1.0;
  probe.values[2] = 1.0;
  probe.mask = ones_like_shape({3});
  auto metric = denormalize(probe, 2.0, 8.0);
  REQUIRE_THAT(metric.values[0], WithinAbs(5.0, 1e-15));
  REQUIRE_THAT(metric.values[1], WithinAbs(2.0, 1e-15));
  REQUIRE_THAT(metric.values[2], WithinAbs(8.0, 1e-15));
  REQUIRE_THROWS_AS(denormalize(probe, 3.0, 3.0), DataError);
}

TEST_CASE("alignment recovers an exact linear relation", "[metrics]") {
  Tensor<double> gt({3}), pred({3});
  gt[0] = 1; gt[1] = 2; gt[2] = 3;
  pred[0] = 5; pred[1] = 7; pred[2] = 9;
  auto m = ones_like_shape({3});
  for (auto method : {AlignMethod::kL1, AlignMethod::kL2}) {
    auto fit = align_affine(pred, gt, m, method);
    REQUIRE_THAT(fit.alpha, WithinAbs(0.5, 1e-9));
    REQUIRE_THAT(fit.beta, WithinAbs(-1.5, 1e-9));
    REQUIRE(fit.objective < 1e-12);
  }
}

TEST_CASE("identity alignment", "[metrics]") {
  Tensor<double> y({5});
  for (int64_t i = 0; i < 5; ++i) y[i] = 1.0 + 0.7 * static_cast<double>(i);
  auto m = ones_like_shape({5});
  for (auto method : {AlignMethod::kL1, AlignMethod::kL2}) {
    auto fit = align_affine(y, y, m, method);
    REQUIRE_THAT(fit.alpha, WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(fit.beta, WithinAbs(0.0, 1e-9));
    REQUIRE(fit.objective < 1e-15);
  }
}

TEST_CASE("alignment degenerate inputs", "[metrics]") {
  Tensor<double> constant = Tensor<double>::full({5}, 2.0);
  Tensor<double> gt({5});
  for (int64_t i = 0; i < 5; ++i) gt[i] = static_cast<double>(i);
  auto m = ones_like_shape({5});
  REQUIRE_THROWS_AS(align_affine(constant, gt, m, AlignMethod::kL2), DataError);

  Tensor<uint8_t> one_px({5});
  one_px[0] = 1;
  REQUIRE_THROWS_AS(align_affine(gt, gt, one_px, AlignMethod::kL2), DataError);
}

TEST_CASE("L2 alignment residual is orthogonal to [y, 1]", "[metrics]") {
  RngStream r(77);
  Tensor<double> y({300}), gt({300});
  for (int64_t i = 0; i < 300; ++i) {
    y[i] = r.uniform(-2, 2);
    gt[i] = 3.0 * y[i] + 1.0 + r.gaussian() * 0.3;
  }
  auto m = ones_like_shape({300});
  auto fit = align_affine(y, gt, m, AlignMethod::kL2);
  double dot_y = 0, dot_1 = 0;
  for (int64_t i = 0; i < 300; ++i) {
    const double res = fit.alpha * y[i] + fit.beta - gt[i];
    dot_y += res * y[i];
    dot_1 += res;
  }
  REQUIRE(std::abs(dot_y) < 1e-9 * 300);
  REQUIRE(std::abs(dot_1) < 1e-9 * 300);
}

TEST_CASE("L1 alignment beats the brute-force grid oracle", "[metrics]") {
  RngStream r(88);
  for (int inst = 0; inst < 5; ++inst) {
    const int n = 200;
    std::vector<double> yv(n), tv(n);
    Tensor<double> y({n}), gt({n});
    const double a = r.uniform(-2, 2), b = r.uniform(-3, 3);
    for (int i = 0; i < n; ++i) {
      yv[i] = r.uniform(-2, 2);
      tv[i] = a * yv[i] + b + (r.uniform() < 0.2 ? r.gaussian() * 2.0 : r.gaussian() * 0.05);
      y[i] = yv[i];
      gt[i] = tv[i];
    }
    auto m = ones_like_shape({n});
    auto fit = align_affine(y, gt, m, AlignMethod::kL1);
    const double grid = oracle::l1_grid_minimum(yv, tv);
    REQUIRE(fit.objective <= grid + 1e-6);
  }
}

TEST_CASE("delta1 frozen examples and strictness", "[metrics]") {
  Tensor<double> gt({3}), pred({3});
  gt[0] = 1; gt[1] = 2; gt[2] = 4;
  pred[0] = 1; pred[1] = 2; pred[2] = 5;
  auto m = ones_like_shape({3});
  REQUIRE_THAT(delta1(pred, gt, m), WithinAbs(100.0 * 2.0 / 3.0, 1e-9));
  REQUIRE_THAT(delta1(gt, gt, m), WithinAbs(100.0, 1e-15));

  Tensor<double> boundary({3});
  for (int64_t i = 0; i < 3; ++i) boundary[i] = 1.25 * gt[i];
  REQUIRE(delta1(boundary, gt, m) == 0.0);

  Tensor<uint8_t> empty({3});
  REQUIRE_THROWS_AS(delta1(pred, gt, empty), DataError);
}

TEST_CASE("absrel frozen examples", "[metrics]") {
  Tensor<double> gt({3}), pred({3});
  gt[0] = 1; gt[1] = 2; gt[2] = 4;
  pred[0] = 1; pred[1] = 2; pred[2] = 5;
  auto m = ones_like_shape({3});
  REQUIRE_THAT(absrel(pred, gt, m), WithinAbs(0.25 / 3.0, 1e-12));
  REQUIRE(absrel(gt, gt, m) == 0.0);
  Tensor<double> twice({3});
  for (int64_t i = 0; i < 3; ++i) twice[i] = 2.0 * gt[i];
  REQUIRE_THAT(absrel(twice, gt, m), WithinAbs(1.0, 1e-12));
}

TEST_CASE("metrics match the direct-definition oracle exactly", "[metrics]") {
  RngStream r(99);
  for (int trial = 0; trial < 1000; ++trial) {
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
    REQUIRE(delta1(pred, gt, m) == oracle::delta1_direct(pred, gt, m));
    REQUIRE(absrel(pred, gt, m) == oracle::absrel_direct(pred, gt, m));
  }
}

TEST_CASE("evaluate_pair is exact for positive affine transforms of gt", "[metrics]") {
  RngStream r(123);
  Tensor<double> gt({100});
  for (int64_t i = 0; i < 100; ++i) gt[i] = r.uniform(1.0, 9.0);
  auto m = ones_like_shape({100});
  Tensor<double> pred({100});
  for (int64_t i = 0; i < 100; ++i) pred[i] = 0.25 * gt[i] - 1.0;
  auto rec = evaluate_pair(pred, gt, m);
  REQUIRE_THAT(rec.delta1_pct, WithinAbs(100.0, 1e-9));
  REQUIRE(rec.absrel < 1e-9);
  REQUIRE(rec.valid_px == 100);
}

TEST_CASE("evaluation is affine invariant", "[metrics]") {
  RngStream r(321);
  Tensor<double> gt({150}), pred({150});
  for (int64_t i = 0; i < 150; ++i) {
    gt[i] = r.uniform(1.0, 9.0);
    pred[i] = gt[i] * 0.8 + r.gaussian() * 0.4;
  }
  auto m = ones_like_shape({150});
  auto base = evaluate_pair(pred, gt, m);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = r.uniform(0.1, 10.0);
    const double b = r.uniform(-5.0, 5.0);
    Tensor<double> mapped({150});
    for (int64_t i = 0; i < 150; ++i) mapped[i] = a * pred[i] + b;
    auto rec = evaluate_pair(mapped, gt, m);
    REQUIRE_THAT(rec.delta1_pct, WithinAbs(base.delta1_pct, 1e-9));
    REQUIRE_THAT(rec.absrel, WithinAbs(base.absrel, 1e-9));
  }
}

TEST_CASE("negative-scale structure is scored as-is", "[metrics]") {
  // prediction anti-correlated with gt: optimal alpha is negative and the
  // alignment is allowed to use it
  Tensor<double> gt({50}), pred({50});
  RngStream r(7);
  for (int64_t i = 0; i < 50; ++i) {
    gt[i] = r.uniform(1.0, 9.0);
    pred[i] = -gt[i];
  }
  auto m = ones_like_shape({50});
  auto rec = evaluate_pair(pred, gt, m);
  REQUIRE(rec.alignment.alpha < 0.0);
  REQUIRE_THAT(rec.delta1_pct, WithinAbs(100.0, 1e-9));
}
