#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ctdx {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

PngImage read_png(const std::filesystem::path& path);
// Reads only width/height from the header; cheap manifest validation.
std::pair<int, int> read_png_size(const std::filesystem::path& path);

void write_png_gray(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& pixels);

}  // namespace ctdx
