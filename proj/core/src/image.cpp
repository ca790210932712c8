#include "ctdx/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctdx {

std::vector<float> bilinear_resize(const std::vector<float>& src, int h, int w, int oh, int ow) {
  if (h < 1 || w < 1 || oh < 1 || ow < 1) throw std::invalid_argument("bilinear_resize: bad size");
  if (src.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("bilinear_resize: buffer size mismatch");
  std::vector<float> out(static_cast<size_t>(oh) * ow);
  double ry = static_cast<double>(h) / oh, rx = static_cast<double>(w) / ow;
  for (int oy = 0; oy < oh; ++oy) {
    double sy = (oy + 0.5) * ry - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    float fy = static_cast<float>(sy - y0);
    int y1 = y0 + 1;
    y0 = std::clamp(y0, 0, h - 1);
    y1 = std::clamp(y1, 0, h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      double sx = (ox + 0.5) * rx - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      float fx = static_cast<float>(sx - x0);
      int x1 = x0 + 1;
      x0 = std::clamp(x0, 0, w - 1);
      x1 = std::clamp(x1, 0, w - 1);
      float v00 = src[static_cast<size_t>(y0) * w + x0];
      float v01 = src[static_cast<size_t>(y0) * w + x1];
      float v10 = src[static_cast<size_t>(y1) * w + x0];
      float v11 = src[static_cast<size_t>(y1) * w + x1];
      out[static_cast<size_t>(oy) * ow + ox] =
          (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    }
  }
  return out;
}

std::vector<std::uint8_t> nearest_resize(const std::vector<std::uint8_t>& src, int h, int w,
                                         int oh, int ow) {
  if (h < 1 || w < 1 || oh < 1 || ow < 1) throw std::invalid_argument("nearest_resize: bad size");
  if (src.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("nearest_resize: buffer size mismatch");
  std::vector<std::uint8_t> out(static_cast<size_t>(oh) * ow);
  double ry = static_cast<double>(h) / oh, rx = static_cast<double>(w) / ow;
  for (int oy = 0; oy < oh; ++oy) {
    int sy = std::min(h - 1, static_cast<int>((oy + 0.5) * ry));
    for (int ox = 0; ox < ow; ++ox) {
      int sx = std::min(w - 1, static_cast<int>((ox + 0.5) * rx));
      out[static_cast<size_t>(oy) * ow + ox] = src[static_cast<size_t>(sy) * w + sx];
    }
  }
  return out;
}

void flip_horizontal_inplace(std::vector<float>& img, int h, int w) {
  for (int y = 0; y < h; ++y)
    std::reverse(img.begin() + static_cast<std::ptrdiff_t>(y) * w,
                 img.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
}

void flip_horizontal_inplace(std::vector<std::uint8_t>& img, int h, int w) {
  for (int y = 0; y < h; ++y)
    std::reverse(img.begin() + static_cast<std::ptrdiff_t>(y) * w,
                 img.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
}

}  // namespace ctdx
