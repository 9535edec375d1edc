// Invertible latent codec: space-to-depth with a fixed patch factor.
//
// encode rearranges an HxWxC raster into an (H/f)x(W/f)x(C*f*f) latent:
//   latent(i, j, c*f*f + a*f + b) = raster(i*f + a, j*f + b, c)
// It is linear, orthogonal (a permutation), and exactly invertible, so the
// diffusion process runs in a lower-resolution, higher-channel space without
// any reconstruction error.
#pragma once

#include "textdepth/common.hpp"
#include "textdepth/tensor.hpp"

namespace textdepth {

inline constexpr int kPatchFactor = 2;

enum class LatentKind { kImage, kDepth, kNoise };

template <typename T>
struct LatentTensor {
  Tensor<T> values;  // H' x W' x C'
  LatentKind kind = LatentKind::kNoise;
};

template <typename T>
LatentTensor<T> encode(const Tensor<T>& raster, LatentKind kind,
                       int factor = kPatchFactor) {
  if (raster.rank() != 2 && raster.rank() != 3)
    throw ShapeError("encode: raster must be HxW or HxWxC");
  const int64_t h = raster.dim(0);
  const int64_t w = raster.dim(1);
  const int64_t c = raster.rank() == 3 ? raster.dim(2) : 1;
  if (h % factor != 0 || w % factor != 0)
    throw ShapeError("encode: raster dimensions " + shape_to_string(raster.shape()) +
                     " not divisible by patch factor " + std::to_string(factor));
  const int64_t hh = h / factor, ww = w / factor, cc = c * factor * factor;
  LatentTensor<T> out{Tensor<T>({hh, ww, cc}), kind};
  for (int64_t i = 0; i < hh; ++i)
    for (int64_t j = 0; j < ww; ++j)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t a = 0; a < factor; ++a)
          for (int64_t b = 0; b < factor; ++b) {
            const int64_t src =
                ((i * factor + a) * w + (j * factor + b)) * c + ch;
            out.values.at(i, j, ch * factor * factor + a * factor + b) =
                raster[src];
          }
  return out;
}

template <typename T>
Tensor<T> decode(const LatentTensor<T>& latent, int channels_out,
                 int factor = kPatchFactor) {
  const Tensor<T>& z = latent.values;
  if (z.rank() != 3) throw ShapeError("decode: latent must be H'xW'xC'");
  if (z.dim(2) != static_cast<int64_t>(channels_out) * factor * factor)
    throw ShapeError("decode: latent channel count " + std::to_string(z.dim(2)) +
                     " inconsistent with " + std::to_string(channels_out) +
                     " output channels at factor " + std::to_string(factor));
  const int64_t hh = z.dim(0), ww = z.dim(1);
  const int64_t h = hh * factor, w = ww * factor, c = channels_out;
  Tensor<T> out(c == 1 ? std::vector<int64_t>{h, w} : std::vector<int64_t>{h, w, c});
  for (int64_t i = 0; i < hh; ++i)
    for (int64_t j = 0; j < ww; ++j)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t a = 0; a < factor; ++a)
          for (int64_t b = 0; b < factor; ++b) {
            const int64_t dst = ((i * factor + a) * w + (j * factor + b)) * c + ch;
            out[dst] = z.at(i, j, ch * factor * factor + a * factor + b);
          }
  return out;
}

}  // namespace textdepth
