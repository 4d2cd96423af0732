#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "binary_io.hpp"
#include "image.hpp"

namespace avp::image {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

ImageTensor from_interleaved(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
  ImageTensor img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0f;
  return img;
}

std::vector<std::uint8_t> to_interleaved(const ImageTensor& img) {
  std::vector<std::uint8_t> rgb(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) rgb[(y * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
  return rgb;
}

// PPM header token reader; skips whitespace and '#' comments.
std::size_t ppm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw Error(Errc::format, "malformed PPM header");
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (v > (1u << 24)) throw Error(Errc::format, "PPM dimension out of range");
  }
  return v;
}

}  // namespace

ImageTensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw Error(Errc::format, "not a binary PPM (P6)");
  std::size_t pos = 2;
  const std::size_t w = ppm_token(bytes, pos);
  const std::size_t h = ppm_token(bytes, pos);
  const std::size_t maxval = ppm_token(bytes, pos);
  if (maxval != 255) throw Error(Errc::format, "only 8-bit PPM (maxval 255) is supported");
  if (w == 0 || h == 0) throw Error(Errc::format, "PPM has zero size");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error(Errc::format, "malformed PPM header");
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw Error(Errc::format, "truncated PPM pixel data");
  return from_interleaved(bytes.data() + pos, h, w);
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto rgb = to_interleaved(img);
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

ImageTensor decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw Error(Errc::format, std::string("cannot read PNG: ") + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(Errc::format, std::string("cannot decode PNG: ") + png.message);
  }
  return from_interleaved(rgb.data(), png.height, png.width);
}

ImageTensor read_png(const std::string& path) { return decode_png(read_file(path)); }

void write_png(const std::string& path, const ImageTensor& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  const auto rgb = to_interleaved(img);
  if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw Error(Errc::io, "cannot write PNG " + path + ": " + png.message);
}

ImageTensor read_image(const std::string& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw Error(Errc::format, "unrecognized image format: " + path);
}

}  // namespace avp::image
