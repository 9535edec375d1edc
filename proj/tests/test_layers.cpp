#include <catch2/catch_amalgamated.hpp>

#include "textdepth/layers.hpp"
#include "textdepth/rng.hpp"
#include "textdepth/selftest.hpp"

using namespace textdepth;
namespace on = textdepth::oracle;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<double> t(std::move(shape));
  RngStream r(seed);
  r.fill_gaussian<double>(t.data());
  return t;
}

double sq_loss(const Tensor<double>& y, const Tensor<double>& target) {
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    const double d = y[i] - target[i];
    s += d * d;
  }
  return s;
}

Tensor<double> sq_loss_grad(const Tensor<double>& y, const Tensor<double>& target) {
  Tensor<double> g(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) g[i] = 2.0 * (y[i] - target[i]);
  return g;
}

}  // namespace

TEST_CASE("conv3x3 gradients match finite differences", "[layers][gradcheck]") {
  std::map<std::string, Tensor<double>> params;
  params.emplace("x", randn({5, 6, 2}, 1));
  params.emplace("w", randn({3, 3, 2, 3}, 2));
  params.emplace("b", randn({3}, 3));
  const auto target = randn({5, 6, 3}, 4);

  auto loss = [&]() {
    nn::ConvCache<double> cache;
    auto y = nn::conv3x3_forward(params.at("x"), params.at("w"), params.at("b"), cache);
    return sq_loss(y, target);
  };

  nn::ConvCache<double> cache;
  auto y = nn::conv3x3_forward(params.at("x"), params.at("w"), params.at("b"), cache);
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("w", Tensor<double>({3, 3, 2, 3}));
  grads.emplace("b", Tensor<double>({3}));
  auto dx = nn::conv3x3_backward(sq_loss_grad(y, target), params.at("w"), cache,
                                 grads.at("w"), grads.at("b"));
  grads.emplace("x", std::move(dx));

  auto report = on::finite_difference_check(params, loss, grads);
  INFO("worst: " << report.worst_tensor << "[" << report.worst_index << "]");
  REQUIRE(report.max_rel_error < 1e-6);
}

TEST_CASE("group norm gradients match finite differences", "[layers][gradcheck]") {
  std::map<std::string, Tensor<double>> params;
  params.emplace("x", randn({4, 4, 8}, 11));
  params.emplace("g", randn({8}, 12));
  params.emplace("b", randn({8}, 13));
  const auto target = randn({4, 4, 8}, 14);
  const int groups = 4;

  auto loss = [&]() {
    nn::GroupNormCache<double> cache;
    auto y = nn::group_norm_forward(params.at("x"), params.at("g"), params.at("b"), groups, cache);
    return sq_loss(y, target);
  };

  nn::GroupNormCache<double> cache;
  auto y = nn::group_norm_forward(params.at("x"), params.at("g"), params.at("b"), groups, cache);
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("g", Tensor<double>({8}));
  grads.emplace("b", Tensor<double>({8}));
  auto dx = nn::group_norm_backward(sq_loss_grad(y, target), params.at("g"), cache,
                                    grads.at("g"), grads.at("b"));
  grads.emplace("x", std::move(dx));

  auto report = on::finite_difference_check(params, loss, grads);
  INFO("worst: " << report.worst_tensor << "[" << report.worst_index << "]");
  REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("gated activation gradients match finite differences", "[layers][gradcheck]") {
  std::map<std::string, Tensor<double>> params;
  params.emplace("x", randn({3, 3, 4}, 21));
  const auto target = randn({3, 3, 4}, 22);

  auto loss = [&]() {
    nn::SiluCache<double> cache;
    auto y = nn::silu_forward(params.at("x"), cache);
    return sq_loss(y, target);
  };

  nn::SiluCache<double> cache;
  auto y = nn::silu_forward(params.at("x"), cache);
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("x", nn::silu_backward(sq_loss_grad(y, target), cache));

  auto report = on::finite_difference_check(params, loss, grads);
  REQUIRE(report.max_rel_error < 1e-6);
}

TEST_CASE("pooling and upsampling gradients match finite differences", "[layers][gradcheck]") {
  std::map<std::string, Tensor<double>> params;
  params.emplace("x", randn({4, 6, 3}, 31));
  const auto target_pool = randn({2, 3, 3}, 32);
  const auto target_up = randn({8, 12, 3}, 33);

  SECTION("avgpool2x2") {
    auto loss = [&]() { return sq_loss(nn::avgpool2x2_forward(params.at("x")), target_pool); };
    auto y = nn::avgpool2x2_forward(params.at("x"));
    std::map<std::string, Tensor<double>> grads;
    grads.emplace("x", nn::avgpool2x2_backward(sq_loss_grad(y, target_pool)));
    auto report = on::finite_difference_check(params, loss, grads);
    REQUIRE(report.max_rel_error < 1e-6);
  }

  SECTION("nearest upsample") {
    auto loss = [&]() { return sq_loss(nn::upsample2x_forward(params.at("x")), target_up); };
    auto y = nn::upsample2x_forward(params.at("x"));
    std::map<std::string, Tensor<double>> grads;
    grads.emplace("x", nn::upsample2x_backward(sq_loss_grad(y, target_up)));
    auto report = on::finite_difference_check(params, loss, grads);
    REQUIRE(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("linear gradients match finite differences", "[layers][gradcheck]") {
  std::map<std::string, Tensor<double>> params;
  params.emplace("x", randn({5, 4}, 41));
  params.emplace("w", randn({3, 4}, 42));
  params.emplace("b", randn({3}, 43));
  const auto target = randn({5, 3}, 44);

  auto loss = [&]() {
    return sq_loss(nn::linear_forward(params.at("x"), params.at("w"), params.at("b")), target);
  };
  auto y = nn::linear_forward(params.at("x"), params.at("w"), params.at("b"));
  std::map<std::string, Tensor<double>> grads;
  grads.emplace("w", Tensor<double>({3, 4}));
  grads.emplace("b", Tensor<double>({3}));
  auto dx = nn::linear_backward(sq_loss_grad(y, target), params.at("x"), params.at("w"),
                                grads.at("w"), grads.at("b"));
  grads.emplace("x", std::move(dx));

  auto report = on::finite_difference_check(params, loss, grads);
  REQUIRE(report.max_rel_error < 1e-6);
}

TEST_CASE("timestep MLP path gradients match finite differences", "[layers][gradcheck]") {
  const int dim = 16;
  std::map<std::string, Tensor<double>> params;
  params.emplace("l0.w", randn({dim, dim}, 51));
  params.emplace("l0.b", randn({dim}, 52));
  params.emplace("l1.w", randn({dim, dim}, 53));
  params.emplace("l1.b", randn({dim}, 54));
  const auto target = randn({1, dim}, 55);
  auto sin_t = nn::sinusoidal_embedding<double>(7, dim);
  Tensor<double> sin_row({1, dim}, std::vector<double>(sin_t.data().begin(), sin_t.data().end()));

  auto run = [&](nn::SiluCache<double>* act, Tensor<double>* pre, Tensor<double>* hidden) {
    auto h0 = nn::linear_forward(sin_row, params.at("l0.w"), params.at("l0.b"));
    nn::SiluCache<double> local;
    auto h1 = nn::silu_forward(h0, act ? *act : local);
    if (act) { *pre = h0; *hidden = h1; }
    return nn::linear_forward(h1, params.at("l1.w"), params.at("l1.b"));
  };
  auto loss = [&]() { return sq_loss(run(nullptr, nullptr, nullptr), target); };

  nn::SiluCache<double> act;
  Tensor<double> pre, hidden;
  auto y = run(&act, &pre, &hidden);
  std::map<std::string, Tensor<double>> grads;
  for (const auto& [name, t] : params) grads.emplace(name, Tensor<double>(t.shape()));
  auto dh1 = nn::linear_backward(sq_loss_grad(y, target), hidden, params.at("l1.w"),
                                 grads.at("l1.w"), grads.at("l1.b"));
  auto dh0 = nn::silu_backward(dh1, act);
  nn::linear_backward(dh0, sin_row, params.at("l0.w"), grads.at("l0.w"), grads.at("l0.b"));

  auto report = on::finite_difference_check(params, loss, grads);
  REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("sinusoidal embeddings separate timesteps", "[layers]") {
  auto e1 = nn::sinusoidal_embedding<double>(1, 64);
  auto e2 = nn::sinusoidal_embedding<double>(2, 64);
  bool differ = false;
  for (int64_t i = 0; i < 64; ++i)
    if (e1[i] != e2[i]) differ = true;
  REQUIRE(differ);
}

namespace {

struct AttnFixture {
  std::map<std::string, Tensor<double>> params;
  std::vector<uint8_t> mask;
  Tensor<double> target;
  int heads = 2;

  explicit AttnFixture(bool all_pad) {
    params.emplace("x", randn({2, 3, 8}, 61));
    params.emplace("tok", randn({4, 6}, 62));  // 4 tokens, dim 6
    params.emplace("wq", randn({8, 8}, 63));
    params.emplace("bq", randn({8}, 64));
    params.emplace("wk", randn({8, 6}, 65));
    params.emplace("bk", randn({8}, 66));
    params.emplace("wv", randn({8, 6}, 67));
    params.emplace("bv", randn({8}, 68));
    params.emplace("wo", randn({8, 8}, 69));
    params.emplace("bo", randn({8}, 70));
    target = randn({2, 3, 8}, 71);
    mask = all_pad ? std::vector<uint8_t>{0, 0, 0, 0} : std::vector<uint8_t>{1, 1, 1, 0};
  }

  Tensor<double> forward(nn::AttentionCache<double>& cache) const {
    return nn::cross_attention_forward(
        params.at("x"), params.at("tok"), mask, heads, params.at("wq"), params.at("bq"),
        params.at("wk"), params.at("bk"), params.at("wv"), params.at("bv"), params.at("wo"),
        params.at("bo"), cache);
  }
};

}  // namespace

TEST_CASE("cross attention gradients match finite differences", "[layers][gradcheck]") {
  for (bool all_pad : {false, true}) {
    DYNAMIC_SECTION("all_pad=" << all_pad) {
      AttnFixture fx(all_pad);
      auto loss = [&]() {
        nn::AttentionCache<double> cache;
        return sq_loss(fx.forward(cache), fx.target);
      };
      nn::AttentionCache<double> cache;
      auto y = fx.forward(cache);
      std::map<std::string, Tensor<double>> grads;
      for (const auto& [name, t] : fx.params) grads.emplace(name, Tensor<double>(t.shape()));
      auto dx = nn::cross_attention_backward(
          sq_loss_grad(y, fx.target), cache, fx.params.at("wq"), fx.params.at("wk"),
          fx.params.at("wv"), fx.params.at("wo"), grads.at("wq"), grads.at("bq"),
          grads.at("wk"), grads.at("bk"), grads.at("wv"), grads.at("bv"), grads.at("wo"),
          grads.at("bo"), grads.at("tok"));
      grads.at("x") = std::move(dx);

      auto report = on::finite_difference_check(fx.params, loss, grads);
      INFO("worst: " << report.worst_tensor << "[" << report.worst_index << "]");
      REQUIRE(report.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("all-PAD attention context is zero", "[layers]") {
  AttnFixture fx(true);
  nn::AttentionCache<double> cache;
  auto y = fx.forward(cache);
  for (int64_t i = 0; i < cache.ctx.numel(); ++i) REQUIRE(cache.ctx[i] == 0.0);
  // output = x + bo broadcast
  for (int64_t s = 0; s < 6; ++s)
    for (int64_t c = 0; c < 8; ++c)
      REQUIRE(y[s * 8 + c] == fx.params.at("x")[s * 8 + c] + fx.params.at("bo")[c]);
}

TEST_CASE("attention probabilities are a masked distribution", "[layers]") {
  AttnFixture fx(false);
  nn::AttentionCache<double> cache;
  fx.forward(cache);
  for (int hh = 0; hh < 2; ++hh)
    for (int64_t r = 0; r < 6; ++r) {
      double sum = 0.0;
      for (int64_t j = 0; j < 4; ++j) {
        const double p = cache.probs[(hh * 6 + r) * 4 + j];
        REQUIRE(p >= 0.0);
        if (j == 3) REQUIRE(p == 0.0);  // masked column
        sum += p;
      }
      REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}
