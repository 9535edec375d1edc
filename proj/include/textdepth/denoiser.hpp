// Text-conditioned U-Net noise predictor.
//
// Input is the channel-concatenation of the noisy depth latent and the image
// latent. Each conv unit is conv3x3 -> group norm -> additive per-channel
// timestep bias -> gated activation. Down levels end in 2x2 average pooling;
// the bottleneck carries one multi-head cross-attention over the embedded
// caption tokens; up levels use nearest-neighbor upsampling with skip
// concatenation. The final conv starts at exactly zero, so a fresh model
// predicts zero everywhere.
//
// Parameters live in a name -> tensor map; gradients mirror that map.
#pragma once

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "textdepth/codec.hpp"
#include "textdepth/layers.hpp"
#include "textdepth/rng.hpp"
#include "textdepth/schedule.hpp"
#include "textdepth/tensor.hpp"
#include "textdepth/vocab.hpp"

namespace textdepth {

enum class Parameterization { kEpsilon, kV };

inline std::string to_string(Parameterization p) {
  return p == Parameterization::kV ? "v" : "epsilon";
}

inline Parameterization parameterization_from_string(const std::string& s) {
  if (s == "v") return Parameterization::kV;
  if (s == "epsilon" || s == "eps") return Parameterization::kEpsilon;
  throw ConfigError("unknown parameterization: " + s);
}

struct DenoiserConfig {
  int base_width = 32;
  std::vector<int> level_widths{32, 64, 128};
  int groups = 8;
  int token_dim = 64;
  int max_tokens = kDefaultMaxTokens;
  int heads = 2;
  int vocab_size = 64;
  int depth_latent_channels = 4;   // also the prediction channel count
  int image_latent_channels = 12;
  int time_dim = 64;
  Parameterization parameterization = Parameterization::kV;
  // attention at the bottleneck only (default) or after every level's
  // second conv unit as well
  bool attention_all_levels = false;

  int in_channels() const { return depth_latent_channels + image_latent_channels; }
  int bottleneck_width() const { return level_widths.back(); }

  void validate() const {
    if (level_widths.size() < 2)
      throw ConfigError("denoiser: need at least two levels (down + bottleneck)");
    if (base_width % groups != 0)
      throw ConfigError("denoiser: base width must be divisible by groups");
    for (int w : level_widths)
      if (w <= 0 || w % groups != 0)
        throw ConfigError("denoiser: level widths must be positive multiples of groups");
    if (bottleneck_width() % heads != 0)
      throw ConfigError("denoiser: heads must divide the bottleneck width");
    if (attention_all_levels)
      for (int w : level_widths)
        if (w % heads != 0)
          throw ConfigError("denoiser: heads must divide every level width");
    if (time_dim % 2 != 0) throw ConfigError("denoiser: time_dim must be even");
    if (max_tokens < 1 || token_dim < 1 || vocab_size < 2)
      throw ConfigError("denoiser: invalid token configuration");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

inline nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"base_width", c.base_width},
          {"level_widths", c.level_widths},
          {"groups", c.groups},
          {"token_dim", c.token_dim},
          {"max_tokens", c.max_tokens},
          {"heads", c.heads},
          {"vocab_size", c.vocab_size},
          {"depth_latent_channels", c.depth_latent_channels},
          {"image_latent_channels", c.image_latent_channels},
          {"time_dim", c.time_dim},
          {"attention_all_levels", c.attention_all_levels},
          {"parameterization", to_string(c.parameterization)}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.base_width = j.at("base_width").get<int>();
  c.level_widths = j.at("level_widths").get<std::vector<int>>();
  c.groups = j.at("groups").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.heads = j.at("heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.depth_latent_channels = j.at("depth_latent_channels").get<int>();
  c.image_latent_channels = j.at("image_latent_channels").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.attention_all_levels = j.value("attention_all_levels", false);
  c.parameterization = parameterization_from_string(j.at("parameterization").get<std::string>());
  return c;
}

template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

namespace detail {

struct ConvUnitSpec {
  std::string name;
  int in_ch = 0;
  int out_ch = 0;
};

struct DenoiserPlan {
  std::vector<ConvUnitSpec> units;  // execution order, mid attention between
                                    // mid.u0 and mid.u1
  // attention blocks by name prefix and channel width, in execution order
  std::vector<std::pair<std::string, int>> attn;
  int stem_in = 0, stem_out = 0;
  int out_in = 0, out_out = 0;
  int levels = 0;
};

inline DenoiserPlan make_plan(const DenoiserConfig& cfg) {
  cfg.validate();
  DenoiserPlan plan;
  const int levels = static_cast<int>(cfg.level_widths.size());
  plan.levels = levels;
  plan.stem_in = cfg.in_channels();
  plan.stem_out = cfg.base_width;
  int cur = cfg.base_width;
  for (int l = 0; l < levels - 1; ++l) {
    const int w = cfg.level_widths[static_cast<size_t>(l)];
    plan.units.push_back({"down" + std::to_string(l) + ".u0", cur, w});
    plan.units.push_back({"down" + std::to_string(l) + ".u1", w, w});
    if (cfg.attention_all_levels)
      plan.attn.emplace_back("down" + std::to_string(l) + ".attn", w);
    cur = w;
  }
  const int mid = cfg.bottleneck_width();
  plan.units.push_back({"mid.u0", cur, mid});
  plan.units.push_back({"mid.u1", mid, mid});
  plan.attn.emplace_back("mid.attn", mid);
  cur = mid;
  for (int l = levels - 2; l >= 0; --l) {
    const int w = cfg.level_widths[static_cast<size_t>(l)];
    plan.units.push_back({"up" + std::to_string(l) + ".u0", cur + w, w});
    plan.units.push_back({"up" + std::to_string(l) + ".u1", w, w});
    if (cfg.attention_all_levels)
      plan.attn.emplace_back("up" + std::to_string(l) + ".attn", w);
    cur = w;
  }
  plan.out_in = cur;
  plan.out_out = cfg.depth_latent_channels;
  return plan;
}

}  // namespace detail

// Weight layout: conv 3x3xCinxCout (HWIO), linear Out x In.
template <typename T>
ParamSet<T> init_parameters(const DenoiserConfig& cfg, RngStream& rng) {
  const auto plan = detail::make_plan(cfg);
  ParamSet<T> p;
  const double sigma = 0.02;
  auto trunc_fill = [&rng, sigma](Tensor<T>& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<T>(rng.truncated_gaussian(sigma));
  };
  auto add_conv = [&](const std::string& name, int in, int out, bool zero) {
    Tensor<T> w({3, 3, in, out});
    Tensor<T> b({out});
    if (!zero) trunc_fill(w);
    p.emplace(name + ".w", std::move(w));
    p.emplace(name + ".b", std::move(b));
  };
  auto add_linear = [&](const std::string& name, int out, int in) {
    Tensor<T> w({out, in});
    Tensor<T> b({out});
    trunc_fill(w);
    p.emplace(name + ".w", std::move(w));
    p.emplace(name + ".b", std::move(b));
  };

  add_conv("stem.conv", plan.stem_in, plan.stem_out, false);
  for (const auto& u : plan.units) {
    add_conv(u.name + ".conv", u.in_ch, u.out_ch, false);
    p.emplace(u.name + ".gn.g", Tensor<T>::full({u.out_ch}, T(1)));
    p.emplace(u.name + ".gn.b", Tensor<T>({u.out_ch}));
    add_linear(u.name + ".time", u.out_ch, cfg.time_dim);
  }
  auto add_attn = [&](const std::string& wname, const std::string& bname, int out, int in) {
    Tensor<T> w({out, in});
    trunc_fill(w);
    p.emplace(wname, std::move(w));
    p.emplace(bname, Tensor<T>({out}));
  };
  for (const auto& [prefix, width] : plan.attn) {
    add_attn(prefix + ".wq", prefix + ".bq", width, width);
    add_attn(prefix + ".wk", prefix + ".bk", width, cfg.token_dim);
    add_attn(prefix + ".wv", prefix + ".bv", width, cfg.token_dim);
    add_attn(prefix + ".wo", prefix + ".bo", width, width);
  }
  add_linear("tmlp.l0", cfg.time_dim, cfg.time_dim);
  add_linear("tmlp.l1", cfg.time_dim, cfg.time_dim);
  Tensor<T> table({cfg.vocab_size, cfg.token_dim});
  trunc_fill(table);
  p.emplace("tok.table", std::move(table));
  add_conv("out.conv", plan.out_in, plan.out_out, true);  // exactly zero
  return p;
}

template <typename T>
int64_t parameter_count(const ParamSet<T>& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& params) {
  ParamSet<T> out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor<T>(t.shape()));
  return out;
}

template <typename T>
struct DenoiserCache {
  Tensor<T> input;  // concatenated latents
  nn::ConvCache<T> stem;
  struct UnitCache {
    nn::ConvCache<T> conv;
    nn::GroupNormCache<T> gn;
    nn::SiluCache<T> act;
  };
  std::vector<UnitCache> units;
  std::vector<nn::AttentionCache<T>> attns;  // execution order
  nn::ConvCache<T> out;
  Tensor<T> sin_emb;     // 1 x time_dim
  Tensor<T> mlp_pre;     // 1 x time_dim, l0 output before activation
  nn::SiluCache<T> mlp_act;
  Tensor<T> mlp_hidden;  // 1 x time_dim, after activation
  Tensor<T> temb;        // 1 x time_dim
  Tensor<T> token_emb;   // max_tokens x token_dim
  TokenSequence tokens;
  std::vector<std::vector<int64_t>> skip_shapes;
};

namespace detail {

template <typename T>
const Tensor<T>& param(const ParamSet<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError("missing parameter tensor: " + name);
  return it->second;
}

template <typename T>
Tensor<T> conv_unit_forward(const Tensor<T>& x, const std::string& name,
                            const ParamSet<T>& params, const DenoiserConfig& cfg,
                            const Tensor<T>& temb,
                            typename DenoiserCache<T>::UnitCache& cache) {
  Tensor<T> h = nn::conv3x3_forward(x, param(params, name + ".conv.w"),
                                    param(params, name + ".conv.b"), cache.conv);
  h = nn::group_norm_forward(h, param(params, name + ".gn.g"),
                             param(params, name + ".gn.b"), cfg.groups, cache.gn);
  const Tensor<T> tb =
      nn::linear_forward(temb, param(params, name + ".time.w"), param(params, name + ".time.b"));
  const int64_t c = h.dim(2);
  for (int64_t s = 0; s < h.numel() / c; ++s)
    for (int64_t cc = 0; cc < c; ++cc) h[s * c + cc] += tb[cc];
  return nn::silu_forward(h, cache.act);
}

// Returns dx; accumulates parameter gradients and the shared d(temb).
template <typename T>
Tensor<T> conv_unit_backward(const Tensor<T>& dy, const std::string& name,
                             const ParamSet<T>& params, const DenoiserConfig& cfg,
                             const Tensor<T>& temb,
                             const typename DenoiserCache<T>::UnitCache& cache,
                             ParamSet<T>& grads, Tensor<T>& dtemb) {
  Tensor<T> dh = nn::silu_backward(dy, cache.act);
  // time bias: d(tb)[c] = sum over spatial positions
  const int64_t c = dh.dim(2);
  Tensor<T> dtb({1, c});
  for (int64_t s = 0; s < dh.numel() / c; ++s)
    for (int64_t cc = 0; cc < c; ++cc) dtb[cc] += dh[s * c + cc];
  Tensor<T> dtemb_part =
      nn::linear_backward(dtb, temb, param(params, name + ".time.w"),
                          grads.at(name + ".time.w"), grads.at(name + ".time.b"));
  for (int64_t i = 0; i < dtemb.numel(); ++i) dtemb[i] += dtemb_part[i];
  dh = nn::group_norm_backward(dh, param(params, name + ".gn.g"), cache.gn,
                               grads.at(name + ".gn.g"), grads.at(name + ".gn.b"));
  return nn::conv3x3_backward(dh, param(params, name + ".conv.w"), cache.conv,
                              grads.at(name + ".conv.w"), grads.at(name + ".conv.b"));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
    throw ShapeError("concat: spatial dims differ");
  const int64_t h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor<T> out({h, w, ca + cb});
  for (int64_t s = 0; s < h * w; ++s) {
    for (int64_t c = 0; c < ca; ++c) out[s * (ca + cb) + c] = a[s * ca + c];
    for (int64_t c = 0; c < cb; ++c) out[s * (ca + cb) + ca + c] = b[s * cb + c];
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& d, int64_t ca, Tensor<T>& da, Tensor<T>& db) {
  const int64_t h = d.dim(0), w = d.dim(1), c = d.dim(2);
  const int64_t cb = c - ca;
  da = Tensor<T>({h, w, ca});
  db = Tensor<T>({h, w, cb});
  for (int64_t s = 0; s < h * w; ++s) {
    for (int64_t cc = 0; cc < ca; ++cc) da[s * ca + cc] = d[s * c + cc];
    for (int64_t cc = 0; cc < cb; ++cc) db[s * cb + cc] = d[s * c + ca + cc];
  }
}

}  // namespace detail

// eps- or v-prediction for the noisy depth latent z_t, conditioned on the
// image latent, the timestep, and the caption tokens.
template <typename T>
Tensor<T> denoiser_forward(const ParamSet<T>& params, const DenoiserConfig& cfg,
                           const Tensor<T>& z_t, const Tensor<T>& x_latent, int t,
                           const TokenSequence& tokens, DenoiserCache<T>& cache) {
  using detail::param;
  if (t < 1) throw ConfigError("denoiser: timestep must be >= 1");
  if (z_t.rank() != 3 || z_t.dim(2) != cfg.depth_latent_channels)
    throw ShapeError("denoiser: z_t has wrong channel count");
  if (x_latent.rank() != 3 || x_latent.dim(2) != cfg.image_latent_channels)
    throw ShapeError("denoiser: image latent has wrong channel count");
  if (z_t.dim(0) != x_latent.dim(0) || z_t.dim(1) != x_latent.dim(1))
    throw ShapeError("denoiser: latents are not spatially aligned");
  if (static_cast<int>(tokens.ids.size()) != cfg.max_tokens)
    throw ShapeError("denoiser: token sequence length mismatch");

  const auto plan = detail::make_plan(cfg);
  cache.units.resize(plan.units.size());
  cache.attns.resize(plan.attn.size());
  cache.tokens = tokens;

  // timestep embedding -> MLP
  Tensor<T> sin = nn::sinusoidal_embedding<T>(t, cfg.time_dim);
  cache.sin_emb = Tensor<T>({1, cfg.time_dim}, std::vector<T>(sin.data().begin(), sin.data().end()));
  cache.mlp_pre = nn::linear_forward(cache.sin_emb, param(params, "tmlp.l0.w"),
                                     param(params, "tmlp.l0.b"));
  cache.mlp_hidden = nn::silu_forward(cache.mlp_pre, cache.mlp_act);
  cache.temb = nn::linear_forward(cache.mlp_hidden, param(params, "tmlp.l1.w"),
                                  param(params, "tmlp.l1.b"));

  // Token embedding lookup plus a fixed sinusoidal position vector. Without
  // positions, attention over a token set is permutation-invariant and
  // mirrored direction captions ("left ... near ... right ... far" vs its
  // swap) would be indistinguishable.
  const Tensor<T>& table = param(params, "tok.table");
  cache.token_emb = Tensor<T>({cfg.max_tokens, cfg.token_dim});
  for (int k = 0; k < cfg.max_tokens; ++k) {
    const int32_t id = tokens.ids[static_cast<size_t>(k)];
    if (id < 0 || id >= cfg.vocab_size)
      throw ConfigError("denoiser: token id " + std::to_string(id) + " outside vocabulary");
    const Tensor<T> pos = nn::sinusoidal_embedding<T>(k + 1, cfg.token_dim);
    for (int d = 0; d < cfg.token_dim; ++d)
      cache.token_emb.at(k, d) = table.at(id, d) + pos[d];
  }

  cache.input = detail::concat_channels(z_t, x_latent);
  Tensor<T> cur = nn::conv3x3_forward(cache.input, param(params, "stem.conv.w"),
                                      param(params, "stem.conv.b"), cache.stem);

  const int levels = plan.levels;
  std::vector<Tensor<T>> skips;
  cache.skip_shapes.clear();
  size_t ui = 0;
  size_t ai = 0;
  auto attend = [&](Tensor<T> h, const std::string& prefix) {
    Tensor<T> out = nn::cross_attention_forward(
        h, cache.token_emb, tokens.attention, cfg.heads, param(params, prefix + ".wq"),
        param(params, prefix + ".bq"), param(params, prefix + ".wk"),
        param(params, prefix + ".bk"), param(params, prefix + ".wv"),
        param(params, prefix + ".bv"), param(params, prefix + ".wo"),
        param(params, prefix + ".bo"), cache.attns[ai]);
    ++ai;
    return out;
  };
  for (int l = 0; l < levels - 1; ++l) {
    cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui]);
    ++ui;
    cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui]);
    ++ui;
    if (cfg.attention_all_levels) cur = attend(cur, "down" + std::to_string(l) + ".attn");
    skips.push_back(cur);
    cache.skip_shapes.push_back(cur.shape());
    cur = nn::avgpool2x2_forward(cur);
  }

  cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                  cache.units[ui]);
  ++ui;
  cur = attend(cur, "mid.attn");
  cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                  cache.units[ui]);
  ++ui;

  for (int l = levels - 2; l >= 0; --l) {
    cur = nn::upsample2x_forward(cur);
    cur = detail::concat_channels(cur, skips[static_cast<size_t>(l)]);
    cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui]);
    ++ui;
    cur = detail::conv_unit_forward(cur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui]);
    ++ui;
    if (cfg.attention_all_levels) cur = attend(cur, "up" + std::to_string(l) + ".attn");
  }

  return nn::conv3x3_forward(cur, param(params, "out.conv.w"), param(params, "out.conv.b"),
                             cache.out);
}

// Inference-only convenience wrapper.
template <typename T>
Tensor<T> denoiser_predict(const ParamSet<T>& params, const DenoiserConfig& cfg,
                           const Tensor<T>& z_t, const Tensor<T>& x_latent, int t,
                           const TokenSequence& tokens) {
  DenoiserCache<T> cache;
  return denoiser_forward(params, cfg, z_t, x_latent, t, tokens, cache);
}

// Reverse-mode gradients for every parameter tensor; `dprediction` is the
// loss gradient at the network output.
template <typename T>
void denoiser_backward(const ParamSet<T>& params, const DenoiserConfig& cfg,
                       const DenoiserCache<T>& cache, const Tensor<T>& dprediction,
                       ParamSet<T>& grads) {
  using detail::param;
  const auto plan = detail::make_plan(cfg);
  const int levels = plan.levels;

  size_t ui = plan.units.size();
  size_t ai = plan.attn.size();
  Tensor<T> dcur = nn::conv3x3_backward(dprediction, param(params, "out.conv.w"), cache.out,
                                        grads.at("out.conv.w"), grads.at("out.conv.b"));
  Tensor<T> dtemb({1, cfg.time_dim});
  Tensor<T> dtokens({cfg.max_tokens, cfg.token_dim});
  auto attend_back = [&](Tensor<T> dh, const std::string& prefix) {
    --ai;
    return nn::cross_attention_backward(
        dh, cache.attns[ai], param(params, prefix + ".wq"), param(params, prefix + ".wk"),
        param(params, prefix + ".wv"), param(params, prefix + ".wo"),
        grads.at(prefix + ".wq"), grads.at(prefix + ".bq"), grads.at(prefix + ".wk"),
        grads.at(prefix + ".bk"), grads.at(prefix + ".wv"), grads.at(prefix + ".bv"),
        grads.at(prefix + ".wo"), grads.at(prefix + ".bo"), dtokens);
  };

  std::vector<Tensor<T>> dskips(static_cast<size_t>(levels - 1));
  for (int l = 0; l <= levels - 2; ++l) {
    // reverse of the up loop, which ran l = levels-2 .. 0
    if (cfg.attention_all_levels)
      dcur = attend_back(std::move(dcur), "up" + std::to_string(l) + ".attn");
    --ui;
    dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                      cache.units[ui], grads, dtemb);
    --ui;
    dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                      cache.units[ui], grads, dtemb);
    const int64_t skip_c = cache.skip_shapes[static_cast<size_t>(l)][2];
    Tensor<T> dup, dskip;
    detail::split_channels(dcur, dcur.dim(2) - skip_c, dup, dskip);
    dskips[static_cast<size_t>(l)] = std::move(dskip);
    dcur = nn::upsample2x_backward(dup);
  }

  --ui;
  dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui], grads, dtemb);
  dcur = attend_back(std::move(dcur), "mid.attn");
  --ui;
  dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                    cache.units[ui], grads, dtemb);

  for (int l = levels - 2; l >= 0; --l) {
    dcur = nn::avgpool2x2_backward(dcur);
    Tensor<T>& dskip = dskips[static_cast<size_t>(l)];
    for (int64_t i = 0; i < dcur.numel(); ++i) dcur[i] += dskip[i];
    if (cfg.attention_all_levels)
      dcur = attend_back(std::move(dcur), "down" + std::to_string(l) + ".attn");
    --ui;
    dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                      cache.units[ui], grads, dtemb);
    --ui;
    dcur = detail::conv_unit_backward(dcur, plan.units[ui].name, params, cfg, cache.temb,
                                      cache.units[ui], grads, dtemb);
  }

  nn::conv3x3_backward(dcur, param(params, "stem.conv.w"), cache.stem,
                       grads.at("stem.conv.w"), grads.at("stem.conv.b"));

  // token table scatter
  Tensor<T>& dtable = grads.at("tok.table");
  for (int k = 0; k < cfg.max_tokens; ++k) {
    const int32_t id = cache.tokens.ids[static_cast<size_t>(k)];
    for (int d = 0; d < cfg.token_dim; ++d) dtable.at(id, d) += dtokens.at(k, d);
  }

  // timestep MLP
  Tensor<T> dhidden = nn::linear_backward(dtemb, cache.mlp_hidden, param(params, "tmlp.l1.w"),
                                          grads.at("tmlp.l1.w"), grads.at("tmlp.l1.b"));
  Tensor<T> dpre = nn::silu_backward(dhidden, cache.mlp_act);
  nn::linear_backward(dpre, cache.sin_emb, param(params, "tmlp.l0.w"), grads.at("tmlp.l0.w"),
                      grads.at("tmlp.l0.b"));
}

// --- checkpoint format -------------------------------------------------------
//
// magic "PDCK1", u64 little-endian header length, JSON header
// {format_version, config, iteration, adam_step?, tensors: name -> {shape,
// offset, length}}, then float32 little-endian payloads. Offsets are
// relative to the end of the header.

inline constexpr int kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  DenoiserConfig config;
  ScheduleSpec schedule;
  int64_t iteration = 0;
  ParamSet<T> params;
  // optimizer state, empty when not saved
  ParamSet<T> adam_m;
  ParamSet<T> adam_v;
  int64_t adam_step = -1;  // -1 when absent

  bool has_optimizer() const { return adam_step >= 0; }
};

namespace detail {

inline void put_u64le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
void append_tensor_payload(std::string& payload, nlohmann::json& dir,
                           const std::string& name, const Tensor<T>& t) {
  nlohmann::json meta;
  meta["shape"] = t.shape();
  meta["offset"] = payload.size();
  meta["length"] = sizeof(float) * static_cast<size_t>(t.numel());
  const size_t off = payload.size();
  payload.resize(off + sizeof(float) * static_cast<size_t>(t.numel()));
  float* dst = reinterpret_cast<float*>(payload.data() + off);
  for (int64_t i = 0; i < t.numel(); ++i) dst[i] = static_cast<float>(t[i]);
  dir[name] = std::move(meta);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  nlohmann::json dir = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, t] : ckpt.params)
    detail::append_tensor_payload(payload, dir, name, t);
  if (ckpt.has_optimizer()) {
    for (const auto& [name, t] : ckpt.adam_m)
      detail::append_tensor_payload(payload, dir, "adam.m." + name, t);
    for (const auto& [name, t] : ckpt.adam_v)
      detail::append_tensor_payload(payload, dir, "adam.v." + name, t);
  }
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = {{"denoiser", to_json(ckpt.config)},
                      {"schedule",
                       {{"steps", ckpt.schedule.steps},
                        {"kind", to_string(ckpt.schedule.kind)},
                        {"beta_start", ckpt.schedule.beta_start},
                        {"beta_end", ckpt.schedule.beta_end}}}};
  header["iteration"] = ckpt.iteration;
  if (ckpt.has_optimizer()) header["adam_step"] = ckpt.adam_step;
  header["tensors"] = std::move(dir);
  const std::string hs = header.dump();

  std::string bytes = "PDCK1";
  detail::put_u64le(bytes, hs.size());
  bytes += hs;
  bytes += payload;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("checkpoint write failed: " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  if (bytes.size() < 13 || bytes.compare(0, 5, "PDCK1") != 0)
    throw DataError("not a checkpoint file: " + path.string());
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  if (13 + hlen > bytes.size()) throw DataError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(13, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + path.string() + ": " + e.what());
  }
  if (header.at("format_version").get<int>() != kCheckpointVersion)
    throw DataError("checkpoint format-version mismatch in " + path.string());

  Checkpoint<T> ckpt;
  const auto& cfg_json = header.at("config");
  ckpt.config = denoiser_config_from_json(cfg_json.at("denoiser"));
  const auto& sj = cfg_json.at("schedule");
  ckpt.schedule.steps = sj.at("steps").get<int>();
  ckpt.schedule.kind = schedule_kind_from_string(sj.at("kind").get<std::string>());
  ckpt.schedule.beta_start = sj.at("beta_start").get<double>();
  ckpt.schedule.beta_end = sj.at("beta_end").get<double>();
  ckpt.iteration = header.at("iteration").get<int64_t>();
  ckpt.adam_step = header.contains("adam_step") ? header.at("adam_step").get<int64_t>() : -1;

  const char* payload = bytes.data() + 13 + hlen;
  const size_t payload_size = bytes.size() - 13 - hlen;
  std::vector<std::pair<size_t, size_t>> extents;
  auto read_tensor = [&](const nlohmann::json& meta) {
    const auto shape = meta.at("shape").get<std::vector<int64_t>>();
    const size_t offset = meta.at("offset").get<size_t>();
    const size_t length = meta.at("length").get<size_t>();
    Tensor<T> t(shape);
    if (length != sizeof(float) * static_cast<size_t>(t.numel()))
      throw DataError("checkpoint tensor length mismatch in " + path.string());
    if (offset + length > payload_size)
      throw DataError("checkpoint tensor exceeds file bounds: " + path.string());
    extents.emplace_back(offset, offset + length);
    const float* src = reinterpret_cast<const float*>(payload + offset);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(src[i]);
    return t;
  };
  for (const auto& [name, meta] : header.at("tensors").items()) {
    Tensor<T> t = read_tensor(meta);
    if (name.rfind("adam.m.", 0) == 0) ckpt.adam_m.emplace(name.substr(7), std::move(t));
    else if (name.rfind("adam.v.", 0) == 0) ckpt.adam_v.emplace(name.substr(7), std::move(t));
    else ckpt.params.emplace(name, std::move(t));
  }
  std::sort(extents.begin(), extents.end());
  for (size_t i = 1; i < extents.size(); ++i)
    if (extents[i].first < extents[i - 1].second)
      throw DataError("checkpoint tensor extents overlap: " + path.string());
  return ckpt;
}

}  // namespace textdepth
