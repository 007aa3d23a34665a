#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xvfg/errors.hpp"
#include "xvfg/tensor.hpp"

namespace xvfg {

/// Interleaved 8-bit RGB raster.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Binary PPM (P6, maxval 255). Throws DataError on unreadable, truncated
/// or non-RGB files.
Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image8& image);

/// [1,3,H,W] in [-1,1] <-> 8-bit: v = round((x + 1) * 127.5), halves away
/// from zero, clamped to [0,255]; back as v / 127.5 - 1.
Image8 tensor_to_image(const Tensor& t);
Tensor image_to_tensor(const Image8& image);

void encode_image(const Tensor& t, const std::filesystem::path& path);
Tensor decode_image(const std::filesystem::path& path);

/// Bilinear resize of a [N,C,H,W] tensor (half-pixel centres, edge clamp).
Tensor resize_bilinear(const Tensor& t, int height, int width);

/// Tiles [1,3,H,W] panels: each inner vector is one row, left to right.
/// All panels share H and W; all rows have the same panel count.
Tensor make_grid(const std::vector<std::vector<Tensor>>& rows);

}  // namespace xvfg
