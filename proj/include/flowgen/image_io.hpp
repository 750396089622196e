#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

// 8-bit PNG, top-down rows, interleaved pixels. channels: 1 gray, 3 rgb.
void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels);

// Tiles [N, C, H, W] images in [-1, 1] into a grid PNG (C must be 1 or 3).
// cols == 0 picks ceil(sqrt(N)); unused tiles stay black.
void write_image_grid(const std::string& path, const Tensor& images, int cols = 0);

}  // namespace flowgen
