#include "image_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace avp::image {

namespace {

// Mirror an arbitrary coordinate into [0, n-1] (edge pixel not repeated).
double reflect(double x, double n) {
  if (n <= 1.0) return 0.0;
  const double period = 2.0 * (n - 1.0);
  x = std::fmod(std::fabs(x), period);
  return x > n - 1.0 ? period - x : x;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  return static_cast<std::size_t>(reflect(static_cast<double>(i), static_cast<double>(n)));
}

float sample_bilinear(const ImageTensor& img, std::size_t c, double y, double x) {
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const float fy = static_cast<float>(y - static_cast<double>(y0));
  const float fx = static_cast<float>(x - static_cast<double>(x0));
  // lerp form keeps constant regions exact
  const float top = img.at(c, y0, x0) + fx * (img.at(c, y0, x1) - img.at(c, y0, x0));
  const float bot = img.at(c, y1, x0) + fx * (img.at(c, y1, x1) - img.at(c, y1, x0));
  return top + fy * (bot - top);
}

}  // namespace

void AugmentConfig::validate() const {
  if (crop_min == 0 || crop_min > crop_max) throw Error(Errc::invalid_argument, "need 0 < crop_min <= crop_max");
  if (out_size == 0) throw Error(Errc::invalid_argument, "out_size must be positive");
  if (!(blur_prob >= 0.0f && blur_prob <= 1.0f)) throw Error(Errc::invalid_argument, "blur_prob must be in [0, 1]");
  if (hue_shift < 0.0f || max_rotation < 0.0f) throw Error(Errc::invalid_argument, "jitter ranges must be nonnegative");
  if (!(0.0f <= sat_min && sat_min <= sat_max) || !(0.0f <= val_min && val_min <= val_max))
    throw Error(Errc::invalid_argument, "saturation/value scale ranges must satisfy 0 <= min <= max");
}

Hsv rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float delta = mx - mn;
  Hsv out{0.0f, 0.0f, mx};
  if (mx > 0.0f) out.s = delta / mx;
  if (delta > 0.0f) {
    float h;
    if (mx == r)
      h = (g - b) / delta;
    else if (mx == g)
      h = 2.0f + (b - r) / delta;
    else
      h = 4.0f + (r - g) / delta;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
    out.h = h;
  }
  return out;
}

void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b) {
  const float v = hsv.v, s = hsv.s;
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  float h6 = hsv.h * 6.0f;
  if (h6 >= 6.0f) h6 -= 6.0f;
  const int i = static_cast<int>(std::floor(h6));
  const float f = h6 - static_cast<float>(i);
  const float p = v * (1.0f - s), q = v * (1.0f - f * s), t = v * (1.0f - (1.0f - f) * s);
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

ImageTensor center_crop_half(const ImageTensor& img) {
  if (img.height < 2 || img.width < 2)
    throw Error(Errc::invalid_argument, "center_crop_half needs an image of at least 2x2");
  const std::size_t h = img.height / 2, w = img.width / 2;
  const std::size_t oy = (img.height - h) / 2, ox = (img.width - w) / 2;
  ImageTensor out(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(img.values.data() + (c * img.height + oy + y) * img.width + ox, w, &out.at(c, y, 0));
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
                            std::size_t out_h, std::size_t out_w) {
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0 || y0 + h > img.height || x0 + w > img.width)
    throw Error(Errc::invalid_argument, "resize window out of bounds");
  ImageTensor out(out_h, out_w);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    for (std::size_t x = 0; x < out_w; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = sample_bilinear(img, c, static_cast<double>(y0) + src_y, static_cast<double>(x0) + src_x);
    }
  }
  return out;
}

ImageTensor random_resized_crop(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (img.height == 0 || img.width == 0) throw Error(Errc::invalid_argument, "empty image");
  const ImageTensor* src = &img;
  ImageTensor upscaled;
  const std::size_t short_side = std::min(img.height, img.width);
  if (short_side < cfg.crop_min) {
    const double scale = static_cast<double>(cfg.crop_min) / static_cast<double>(short_side);
    const auto uh = std::max(cfg.crop_min, static_cast<std::size_t>(std::ceil(img.height * scale)));
    const auto uw = std::max(cfg.crop_min, static_cast<std::size_t>(std::ceil(img.width * scale)));
    upscaled = resize_bilinear(img, 0, 0, img.height, img.width, uh, uw);
    src = &upscaled;
  }
  const std::size_t max_side = std::min({cfg.crop_max, src->height, src->width});
  const std::size_t side = std::uniform_int_distribution<std::size_t>(cfg.crop_min, max_side)(rng);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, src->height - side)(rng);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, src->width - side)(rng);
  return resize_bilinear(*src, y0, x0, side, side, cfg.out_size, cfg.out_size);
}

ImageTensor rotate(const ImageTensor& img, float degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0, cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  const double hh = static_cast<double>(img.height), ww = static_cast<double>(img.width);
  ImageTensor out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      // inverse mapping: output pixel samples the source rotated by -angle
      const double sx = reflect(cx + cs * dx + sn * dy, ww);
      const double sy = reflect(cy - sn * dx + cs * dy, hh);
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = sample_bilinear(img, c, sy, sx);
    }
  }
  return out;
}

ImageTensor box_blur3(const ImageTensor& img) {
  ImageTensor out(img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += img.at(c, reflect_index(static_cast<std::ptrdiff_t>(y) + dy, img.height),
                          reflect_index(static_cast<std::ptrdiff_t>(x) + dx, img.width));
        out.at(c, y, x) = std::clamp(acc / 9.0f, 0.0f, 1.0f);
      }
  return out;
}

ImageTensor adjust_hsv(const ImageTensor& img, float hue_shift, float sat_scale, float val_scale) {
  ImageTensor out(img.height, img.width);
  const std::size_t plane = img.height * img.width;
  for (std::size_t i = 0; i < plane; ++i) {
    Hsv hsv = rgb_to_hsv(img.values[i], img.values[plane + i], img.values[2 * plane + i]);
    hsv.h += hue_shift;
    hsv.h -= std::floor(hsv.h);
    hsv.s = std::clamp(hsv.s * sat_scale, 0.0f, 1.0f);
    hsv.v = std::clamp(hsv.v * val_scale, 0.0f, 1.0f);
    hsv_to_rgb(hsv, out.values[i], out.values[plane + i], out.values[2 * plane + i]);
  }
  for (float& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

ImageTensor color_geometry_jitter(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  // all draws happen unconditionally so the stream layout does not depend on the config
  const float angle = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng) * cfg.max_rotation;
  const bool blur = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng) < cfg.blur_prob;
  const float hue = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng) * cfg.hue_shift;
  const float sat = cfg.sat_min + std::uniform_real_distribution<float>(0.0f, 1.0f)(rng) * (cfg.sat_max - cfg.sat_min);
  const float val = cfg.val_min + std::uniform_real_distribution<float>(0.0f, 1.0f)(rng) * (cfg.val_max - cfg.val_min);

  ImageTensor out = angle != 0.0f ? rotate(img, angle) : img;
  if (blur) out = box_blur3(out);
  if (hue != 0.0f || sat != 1.0f || val != 1.0f) out = adjust_hsv(out, hue, sat, val);
  return out;
}

ImageTensor augment_cropped(const ImageTensor& half, const AugmentConfig& cfg, Rng& rng) {
  return color_geometry_jitter(random_resized_crop(half, cfg, rng), cfg, rng);
}

ImageTensor augment_for_training(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng) {
  return augment_cropped(center_crop_half(img), cfg, rng);
}

ImageTensor eval_from_cropped(const ImageTensor& half, const AugmentConfig& cfg) {
  cfg.validate();
  const std::size_t side = std::min({half.height, half.width, (cfg.crop_min + cfg.crop_max) / 2});
  const std::size_t y0 = (half.height - side) / 2, x0 = (half.width - side) / 2;
  return resize_bilinear(half, y0, x0, side, side, cfg.out_size, cfg.out_size);
}

ImageTensor preprocess_for_eval(const ImageTensor& img, const AugmentConfig& cfg) {
  return eval_from_cropped(center_crop_half(img), cfg);
}

}  // namespace avp::image
