// Neural network layers with hand-derived reverse-mode gradients.
//
// Feature maps are HxWxC row-major. Convolutions run as im2col + GEMM
// (Eigen); the im2col matrix is cached by the forward pass and reused by the
// backward pass. Group statistics accumulate in double regardless of the
// scalar type.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "textdepth/common.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// --- conv 3x3, stride 1, zero padding ---------------------------------------

template <typename T>
struct ConvCache {
  Tensor<T> cols;  // (H*W) x (9*Cin)
  int64_t h = 0, w = 0, cin = 0, cout = 0;
};

template <typename T>
Tensor<T> conv3x3_forward(const Tensor<T>& x, const Tensor<T>& weight,
                          const Tensor<T>& bias, ConvCache<T>& cache) {
  if (x.rank() != 3) throw ShapeError("conv3x3: input must be HxWxC");
  const int64_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  if (weight.rank() != 4 || weight.dim(0) != 3 || weight.dim(1) != 3 ||
      weight.dim(2) != cin)
    throw ShapeError("conv3x3: weight must be 3x3xCinxCout matching input");
  const int64_t cout = weight.dim(3);
  const int64_t n = h * w, k = 9 * cin;

  cache.cols = Tensor<T>({n, k});
  cache.h = h;
  cache.w = w;
  cache.cin = cin;
  cache.cout = cout;
  T* cols = cache.cols.raw();
  const T* src = x.raw();
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      T* dst = cols + (i * w + j) * k;
      for (int64_t a = 0; a < 3; ++a) {
        const int64_t si = i + a - 1;
        for (int64_t b = 0; b < 3; ++b) {
          const int64_t sj = j + b - 1;
          if (si >= 0 && si < h && sj >= 0 && sj < w) {
            const T* px = src + (si * w + sj) * cin;
            for (int64_t c = 0; c < cin; ++c) dst[c] = px[c];
          } else {
            for (int64_t c = 0; c < cin; ++c) dst[c] = T(0);
          }
          dst += cin;
        }
      }
    }
  }

  Tensor<T> y({h, w, cout});
  MatMap<T> ym(y.raw(), n, cout);
  ConstMatMap<T> cm(cols, n, k);
  ConstMatMap<T> wm(weight.raw(), k, cout);
  ym.noalias() = cm * wm;
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < cout; ++c) y[r * cout + c] += bias[c];
  return y;
}

template <typename T>
Tensor<T> conv3x3_backward(const Tensor<T>& dy, const Tensor<T>& weight,
                           const ConvCache<T>& cache, Tensor<T>& dweight,
                           Tensor<T>& dbias) {
  const int64_t h = cache.h, w = cache.w, cin = cache.cin, cout = cache.cout;
  const int64_t n = h * w, k = 9 * cin;
  ConstMatMap<T> dym(dy.raw(), n, cout);
  ConstMatMap<T> cm(cache.cols.raw(), n, k);
  ConstMatMap<T> wm(weight.raw(), k, cout);

  MatMap<T> dwm(dweight.raw(), k, cout);
  dwm.noalias() += cm.transpose() * dym;
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < cout; ++c) dbias[c] += dy[r * cout + c];

  RowMat<T> dcols(n, k);
  dcols.noalias() = dym * wm.transpose();

  Tensor<T> dx({h, w, cin});
  T* dst = dx.raw();
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const T* row = dcols.data() + (i * w + j) * k;
      for (int64_t a = 0; a < 3; ++a) {
        const int64_t si = i + a - 1;
        for (int64_t b = 0; b < 3; ++b) {
          const int64_t sj = j + b - 1;
          if (si >= 0 && si < h && sj >= 0 && sj < w) {
            T* px = dst + (si * w + sj) * cin;
            for (int64_t c = 0; c < cin; ++c) px[c] += row[c];
          }
          row += cin;
        }
      }
    }
  }
  return dx;
}

// --- group normalization -----------------------------------------------------

inline constexpr double kGroupNormEps = 1e-5;

template <typename T>
struct GroupNormCache {
  Tensor<T> x;
  std::vector<double> mean;
  std::vector<double> inv_std;
  int groups = 0;
};

template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                             const Tensor<T>& beta, int groups,
                             GroupNormCache<T>& cache) {
  const int64_t c = x.dim(x.rank() - 1);
  if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("group_norm: scale/offset size mismatch");
  const int64_t spatial = x.numel() / c;
  const int64_t gs = c / groups;

  cache.x = x;
  cache.groups = groups;
  cache.mean.assign(static_cast<size_t>(groups), 0.0);
  cache.inv_std.assign(static_cast<size_t>(groups), 0.0);

  Tensor<T> y(x.shape());
  for (int g = 0; g < groups; ++g) {
    const int64_t c0 = g * gs;
    double sum = 0.0, sumsq = 0.0;
    for (int64_t s = 0; s < spatial; ++s) {
      const T* px = x.raw() + s * c + c0;
      for (int64_t cc = 0; cc < gs; ++cc) {
        const double v = static_cast<double>(px[cc]);
        sum += v;
        sumsq += v * v;
      }
    }
    const double m = static_cast<double>(spatial * gs);
    const double mean = sum / m;
    const double var = sumsq / m - mean * mean;
    const double inv = 1.0 / std::sqrt(var + kGroupNormEps);
    cache.mean[static_cast<size_t>(g)] = mean;
    cache.inv_std[static_cast<size_t>(g)] = inv;
    // per-channel affine form: y = x * (inv*gamma) + (beta - mean*inv*gamma)
    std::vector<T> scale(static_cast<size_t>(gs)), offset(static_cast<size_t>(gs));
    for (int64_t cc = 0; cc < gs; ++cc) {
      const double sg = inv * static_cast<double>(gamma[c0 + cc]);
      scale[static_cast<size_t>(cc)] = static_cast<T>(sg);
      offset[static_cast<size_t>(cc)] =
          static_cast<T>(static_cast<double>(beta[c0 + cc]) - mean * sg);
    }
    for (int64_t s = 0; s < spatial; ++s) {
      const T* px = x.raw() + s * c + c0;
      T* py = y.raw() + s * c + c0;
      for (int64_t cc = 0; cc < gs; ++cc)
        py[cc] = px[cc] * scale[static_cast<size_t>(cc)] + offset[static_cast<size_t>(cc)];
    }
  }
  return y;
}

template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                              const GroupNormCache<T>& cache, Tensor<T>& dgamma,
                              Tensor<T>& dbeta) {
  const Tensor<T>& x = cache.x;
  const int64_t c = x.dim(x.rank() - 1);
  const int groups = cache.groups;
  const int64_t gs = c / groups;
  const int64_t spatial = x.numel() / c;

  Tensor<T> dx(x.shape());
  std::vector<double> dg(static_cast<size_t>(gs)), db(static_cast<size_t>(gs));
  for (int g = 0; g < groups; ++g) {
    const int64_t c0 = g * gs;
    const double mean = cache.mean[static_cast<size_t>(g)];
    const double inv = cache.inv_std[static_cast<size_t>(g)];
    const double m = static_cast<double>(spatial * gs);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    std::fill(dg.begin(), dg.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    for (int64_t s = 0; s < spatial; ++s) {
      const T* px = x.raw() + s * c + c0;
      const T* pdy = dy.raw() + s * c + c0;
      for (int64_t cc = 0; cc < gs; ++cc) {
        const double xhat = (static_cast<double>(px[cc]) - mean) * inv;
        const double dxhat = static_cast<double>(pdy[cc]) * static_cast<double>(gamma[c0 + cc]);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dg[static_cast<size_t>(cc)] += static_cast<double>(pdy[cc]) * xhat;
        db[static_cast<size_t>(cc)] += static_cast<double>(pdy[cc]);
      }
    }
    for (int64_t cc = 0; cc < gs; ++cc) {
      dgamma[c0 + cc] += static_cast<T>(dg[static_cast<size_t>(cc)]);
      dbeta[c0 + cc] += static_cast<T>(db[static_cast<size_t>(cc)]);
    }
    // dx = dy * (gamma*inv) + x * kx + kc, with per-channel coefficients
    std::vector<T> ka(static_cast<size_t>(gs));
    const double kx = -inv * inv * sum_dxhat_xhat / m;
    const double kc_base = mean * inv * inv * sum_dxhat_xhat / m - inv * sum_dxhat / m;
    const T kxs = static_cast<T>(kx);
    const T kcs = static_cast<T>(kc_base);
    for (int64_t cc = 0; cc < gs; ++cc)
      ka[static_cast<size_t>(cc)] = static_cast<T>(static_cast<double>(gamma[c0 + cc]) * inv);
    for (int64_t s = 0; s < spatial; ++s) {
      const T* px = x.raw() + s * c + c0;
      const T* pdy = dy.raw() + s * c + c0;
      T* pdx = dx.raw() + s * c + c0;
      for (int64_t cc = 0; cc < gs; ++cc)
        pdx[cc] = pdy[cc] * ka[static_cast<size_t>(cc)] + px[cc] * kxs + kcs;
    }
  }
  return dx;
}

// --- gated activation x * sigmoid(x) ----------------------------------------

template <typename T>
struct SiluCache {
  Tensor<T> x;
};

template <typename T>
Tensor<T> silu_forward(const Tensor<T>& x, SiluCache<T>& cache) {
  cache.x = x;
  Tensor<T> y(x.shape());
  const T* px = x.raw();
  T* py = y.raw();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = px[i];
    py[i] = v / (T(1) + std::exp(-v));
  }
  return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& dy, const SiluCache<T>& cache) {
  Tensor<T> dx(dy.shape());
  const T* px = cache.x.raw();
  const T* pdy = dy.raw();
  T* pdx = dx.raw();
  for (int64_t i = 0; i < dy.numel(); ++i) {
    const T v = px[i];
    const T s = T(1) / (T(1) + std::exp(-v));
    pdx[i] = pdy[i] * s * (T(1) + v * (T(1) - s));
  }
  return dx;
}

// --- 2x2 average pooling and nearest-neighbor upsampling --------------------

template <typename T>
Tensor<T> avgpool2x2_forward(const Tensor<T>& x) {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avgpool2x2: odd input size");
  Tensor<T> y({h / 2, w / 2, c});
  for (int64_t i = 0; i < h / 2; ++i)
    for (int64_t j = 0; j < w / 2; ++j)
      for (int64_t cc = 0; cc < c; ++cc)
        y.at(i, j, cc) = static_cast<T>(
            (static_cast<double>(x.at(2 * i, 2 * j, cc)) + x.at(2 * i, 2 * j + 1, cc) +
             x.at(2 * i + 1, 2 * j, cc) + x.at(2 * i + 1, 2 * j + 1, cc)) /
            4.0);
  return y;
}

template <typename T>
Tensor<T> avgpool2x2_backward(const Tensor<T>& dy) {
  const int64_t h = dy.dim(0), w = dy.dim(1), c = dy.dim(2);
  Tensor<T> dx({h * 2, w * 2, c});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t cc = 0; cc < c; ++cc) {
        const T g = static_cast<T>(static_cast<double>(dy.at(i, j, cc)) / 4.0);
        dx.at(2 * i, 2 * j, cc) = g;
        dx.at(2 * i, 2 * j + 1, cc) = g;
        dx.at(2 * i + 1, 2 * j, cc) = g;
        dx.at(2 * i + 1, 2 * j + 1, cc) = g;
      }
  return dx;
}

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> y({h * 2, w * 2, c});
  for (int64_t i = 0; i < 2 * h; ++i)
    for (int64_t j = 0; j < 2 * w; ++j)
      for (int64_t cc = 0; cc < c; ++cc) y.at(i, j, cc) = x.at(i / 2, j / 2, cc);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  const int64_t h = dy.dim(0) / 2, w = dy.dim(1) / 2, c = dy.dim(2);
  Tensor<T> dx({h, w, c});
  for (int64_t i = 0; i < 2 * h; ++i)
    for (int64_t j = 0; j < 2 * w; ++j)
      for (int64_t cc = 0; cc < c; ++cc) dx.at(i / 2, j / 2, cc) += dy.at(i, j, cc);
  return dx;
}

// --- linear ------------------------------------------------------------------

// x: N x In, weight: Out x In, bias: Out -> y: N x Out
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>& bias) {
  const int64_t n = x.dim(0), in = x.dim(1);
  if (weight.dim(1) != in) throw ShapeError("linear: weight/input mismatch");
  const int64_t out = weight.dim(0);
  Tensor<T> y({n, out});
  ConstMatMap<T> xm(x.raw(), n, in);
  ConstMatMap<T> wm(weight.raw(), out, in);
  MatMap<T> ym(y.raw(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < out; ++c) y[r * out + c] += bias[c];
  return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& weight,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
  const int64_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  ConstMatMap<T> dym(dy.raw(), n, out);
  ConstMatMap<T> xm(x.raw(), n, in);
  ConstMatMap<T> wm(weight.raw(), out, in);
  MatMap<T> dwm(dweight.raw(), out, in);
  dwm.noalias() += dym.transpose() * xm;
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < out; ++c) dbias[c] += dy[r * out + c];
  Tensor<T> dx({n, in});
  MatMap<T> dxm(dx.raw(), n, in);
  dxm.noalias() = dym * wm;
  return dx;
}

// --- sinusoidal timestep embedding -------------------------------------------

// Frequencies 10000^(-2k/dim) for k = 0..dim/2-1; [sin | cos] halves.
template <typename T>
Tensor<T> sinusoidal_embedding(int t, int dim) {
  Tensor<T> e({dim});
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / static_cast<double>(dim));
    e[k] = static_cast<T>(std::sin(t * freq));
    e[half + k] = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

// --- multi-head cross attention ----------------------------------------------

template <typename T>
struct AttentionCache {
  Tensor<T> x_flat;  // N x C
  Tensor<T> tokens;  // Ntok x Dtok
  Tensor<T> q, k, v; // N x C / Ntok x C
  Tensor<T> probs;   // heads x N x Ntok (0 on masked columns)
  Tensor<T> ctx;     // N x C
  std::vector<uint8_t> mask;
  int heads = 0;
  bool all_masked = false;
};

struct AttentionParams {
  // names within the parameter set
  std::string wq, bq, wk, bk, wv, bv, wo, bo;
};

// Queries are spatial features (HxWxC flattened to NxC); keys/values are the
// embedded tokens. Masked softmax; when every token is PAD the context is
// the zero tensor and only the output-projection bias reaches the residual.
template <typename T>
Tensor<T> cross_attention_forward(const Tensor<T>& x, const Tensor<T>& tokens,
                                  const std::vector<uint8_t>& mask, int heads,
                                  const Tensor<T>& wq, const Tensor<T>& bq,
                                  const Tensor<T>& wk, const Tensor<T>& bk,
                                  const Tensor<T>& wv, const Tensor<T>& bv,
                                  const Tensor<T>& wo, const Tensor<T>& bo,
                                  AttentionCache<T>& cache) {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int64_t n = h * w;
  const int64_t ntok = tokens.dim(0);
  if (c % heads != 0) throw ShapeError("attention: heads must divide channels");
  const int64_t dh = c / heads;

  cache.x_flat = Tensor<T>({n, c}, std::vector<T>(x.data().begin(), x.data().end()));
  cache.tokens = tokens;
  cache.mask = mask;
  cache.heads = heads;
  cache.q = linear_forward(cache.x_flat, wq, bq);
  cache.k = linear_forward(tokens, wk, bk);
  cache.v = linear_forward(tokens, wv, bv);
  cache.probs = Tensor<T>({heads, n, ntok});
  cache.ctx = Tensor<T>({n, c});

  bool any_valid = false;
  for (uint8_t m : mask)
    if (m) any_valid = true;
  cache.all_masked = !any_valid;

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (any_valid) {
    std::vector<double> scores(static_cast<size_t>(ntok));
    for (int hh = 0; hh < heads; ++hh) {
      const int64_t off = hh * dh;
      for (int64_t r = 0; r < n; ++r) {
        double mx = -1e300;
        for (int64_t j = 0; j < ntok; ++j) {
          if (!mask[static_cast<size_t>(j)]) continue;
          double s = 0.0;
          for (int64_t d = 0; d < dh; ++d)
            s += static_cast<double>(cache.q[r * c + off + d]) *
                 static_cast<double>(cache.k[j * c + off + d]);
          s *= scale;
          scores[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int64_t j = 0; j < ntok; ++j) {
          if (!mask[static_cast<size_t>(j)]) continue;
          z += std::exp(scores[static_cast<size_t>(j)] - mx);
        }
        for (int64_t j = 0; j < ntok; ++j) {
          const double p = mask[static_cast<size_t>(j)]
                               ? std::exp(scores[static_cast<size_t>(j)] - mx) / z
                               : 0.0;
          cache.probs[(hh * n + r) * ntok + j] = static_cast<T>(p);
        }
        for (int64_t d = 0; d < dh; ++d) {
          double acc = 0.0;
          for (int64_t j = 0; j < ntok; ++j)
            acc += static_cast<double>(cache.probs[(hh * n + r) * ntok + j]) *
                   static_cast<double>(cache.v[j * c + off + d]);
          cache.ctx[r * c + off + d] = static_cast<T>(acc);
        }
      }
    }
  }
  // all-PAD: probs and ctx stay zero

  Tensor<T> out = linear_forward(cache.ctx, wo, bo);
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] + out[i];
  return y;
}

template <typename T>
Tensor<T> cross_attention_backward(const Tensor<T>& dy, const AttentionCache<T>& cache,
                                   const Tensor<T>& wq, const Tensor<T>& wk,
                                   const Tensor<T>& wv, const Tensor<T>& wo,
                                   Tensor<T>& dwq, Tensor<T>& dbq, Tensor<T>& dwk,
                                   Tensor<T>& dbk, Tensor<T>& dwv, Tensor<T>& dbv,
                                   Tensor<T>& dwo, Tensor<T>& dbo, Tensor<T>& dtokens) {
  const int64_t n = cache.x_flat.dim(0), c = cache.x_flat.dim(1);
  const int64_t ntok = cache.tokens.dim(0);
  const int heads = cache.heads;
  const int64_t dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor<T> dy_flat({n, c}, std::vector<T>(dy.data().begin(), dy.data().end()));

  // y = x + Wo(ctx): residual passes dy straight through to x
  Tensor<T> dctx = linear_backward(dy_flat, cache.ctx, wo, dwo, dbo);

  Tensor<T> dq({n, c}), dk({ntok, c}), dv({ntok, c});
  if (!cache.all_masked) {
    for (int hh = 0; hh < heads; ++hh) {
      const int64_t off = hh * dh;
      for (int64_t r = 0; r < n; ++r) {
        // dprobs and softmax backward for this row
        double dot = 0.0;
        std::vector<double> dp(static_cast<size_t>(ntok), 0.0);
        for (int64_t j = 0; j < ntok; ++j) {
          double acc = 0.0;
          for (int64_t d = 0; d < dh; ++d)
            acc += static_cast<double>(dctx[r * c + off + d]) *
                   static_cast<double>(cache.v[j * c + off + d]);
          dp[static_cast<size_t>(j)] = acc;
          dot += acc * static_cast<double>(cache.probs[(hh * n + r) * ntok + j]);
        }
        for (int64_t j = 0; j < ntok; ++j) {
          const double p = static_cast<double>(cache.probs[(hh * n + r) * ntok + j]);
          const double ds = p * (dp[static_cast<size_t>(j)] - dot) * scale;
          if (ds != 0.0) {
            for (int64_t d = 0; d < dh; ++d) {
              dq[r * c + off + d] += static_cast<T>(
                  ds * static_cast<double>(cache.k[j * c + off + d]));
              dk[j * c + off + d] += static_cast<T>(
                  ds * static_cast<double>(cache.q[r * c + off + d]));
            }
          }
          if (p != 0.0) {
            for (int64_t d = 0; d < dh; ++d)
              dv[j * c + off + d] += static_cast<T>(
                  p * static_cast<double>(dctx[r * c + off + d]));
          }
        }
      }
    }
  }

  Tensor<T> dx_flat = linear_backward(dq, cache.x_flat, wq, dwq, dbq);
  Tensor<T> dtok_k = linear_backward(dk, cache.tokens, wk, dwk, dbk);
  Tensor<T> dtok_v = linear_backward(dv, cache.tokens, wv, dwv, dbv);
  for (int64_t i = 0; i < dtokens.numel(); ++i) dtokens[i] += dtok_k[i] + dtok_v[i];

  Tensor<T> dx(dy.shape());
  for (int64_t i = 0; i < dx.numel(); ++i) dx[i] = dy[i] + dx_flat[i];
  return dx;
}

}  // namespace textdepth::nn
