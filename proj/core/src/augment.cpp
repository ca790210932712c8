#include <cmath>
#include <stdexcept>

#include "ctdx/corpus.hpp"
#include "ctdx/image.hpp"

namespace ctdx {

Augmented augment_sample(const CTImage& img, const std::optional<PixelMask>& mask,
                         const AugmentConfig& cfg, Rng& rng) {
  if (img.h < 2 || img.w < 2) throw std::invalid_argument("augment: image too small");
  if (cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0)
    throw std::invalid_argument("augment: flip probability out of range");
  if (cfg.min_crop_frac <= 0.0 || cfg.min_crop_frac > 1.0)
    throw std::invalid_argument("augment: crop fraction out of range");
  if (mask && (mask->h != img.h || mask->w != img.w))
    throw std::invalid_argument("augment: mask size does not match image");

  int out_h = cfg.out_h > 0 ? cfg.out_h : img.h;
  int out_w = cfg.out_w > 0 ? cfg.out_w : img.w;

  Augmented a;
  // Fixed draw order regardless of mask presence keeps runs reproducible.
  a.flipped = rng.uniform() < cfg.flip_prob;
  a.crop_h = std::clamp(static_cast<int>(std::lround(img.h * rng.uniform(cfg.min_crop_frac, 1.0))),
                        1, img.h);
  a.crop_w = std::clamp(static_cast<int>(std::lround(img.w * rng.uniform(cfg.min_crop_frac, 1.0))),
                        1, img.w);
  a.crop_y0 = rng.uniform_int(0, img.h - a.crop_h);
  a.crop_x0 = rng.uniform_int(0, img.w - a.crop_w);

  std::vector<float> work = img.pixels;
  if (a.flipped) flip_horizontal_inplace(work, img.h, img.w);
  work = crop(work, img.h, img.w, a.crop_y0, a.crop_x0, a.crop_h, a.crop_w);
  a.image.h = out_h;
  a.image.w = out_w;
  a.image.pixels = bilinear_resize(work, a.crop_h, a.crop_w, out_h, out_w);

  if (mask) {
    std::vector<std::uint8_t> mwork = mask->values;
    if (a.flipped) flip_horizontal_inplace(mwork, img.h, img.w);
    mwork = crop(mwork, img.h, img.w, a.crop_y0, a.crop_x0, a.crop_h, a.crop_w);
    PixelMask out;
    out.h = out_h;
    out.w = out_w;
    out.values = nearest_resize(mwork, a.crop_h, a.crop_w, out_h, out_w);
    a.mask = std::move(out);
  }
  return a;
}

}  // namespace ctdx
