#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace avp::image {

/// RGB image, channel-major [3][H][W], values in [0, 1].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), values(3 * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }
};

// 8-bit RGB ingestion; values map to k/255.
ImageTensor decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const ImageTensor& img);
ImageTensor decode_png(const std::vector<std::uint8_t>& bytes);
ImageTensor read_png(const std::string& path);
void write_png(const std::string& path, const ImageTensor& img);

/// Dispatches on the file signature (PNG magic or "P6").
ImageTensor read_image(const std::string& path);

}  // namespace avp::image
