#pragma once

#include <cstdint>
#include <vector>

namespace ctdx {

// Plain float image plane helpers (values usually in [0,1]), used by the
// corpus pipeline outside the autodiff graph.

std::vector<float> bilinear_resize(const std::vector<float>& src, int h, int w, int oh, int ow);
std::vector<std::uint8_t> nearest_resize(const std::vector<std::uint8_t>& src, int h, int w,
                                         int oh, int ow);
void flip_horizontal_inplace(std::vector<float>& img, int h, int w);
void flip_horizontal_inplace(std::vector<std::uint8_t>& img, int h, int w);

template <typename T>
std::vector<T> crop(const std::vector<T>& src, int h, int w, int y0, int x0, int ch, int cw) {
  std::vector<T> out(static_cast<size_t>(ch) * cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      out[static_cast<size_t>(y) * cw + x] = src[static_cast<size_t>(y0 + y) * w + (x0 + x)];
  return out;
}

}  // namespace ctdx
