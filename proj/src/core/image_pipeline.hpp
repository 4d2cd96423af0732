#pragma once

#include "image.hpp"

namespace avp::image {

struct AugmentConfig {
  std::size_t crop_min = 192;
  std::size_t crop_max = 384;
  std::size_t out_size = 192;
  float hue_shift = 0.05f;  // additive, fraction of the hue circle
  float sat_min = 0.8f, sat_max = 1.25f;
  float val_min = 0.8f, val_max = 1.25f;
  float max_rotation = 90.0f;  // degrees
  float blur_prob = 0.2f;

  void validate() const;
};

struct Hsv {
  float h, s, v;  // h in [0, 1)
};

/// h = 60deg sector formula scaled to [0,1); s = (max-min)/max (0 when max = 0); v = max.
Hsv rgb_to_hsv(float r, float g, float b);
/// Inverse of rgb_to_hsv: sector i = floor(6h), f = 6h - i, p = v(1-s), q = v(1-fs), t = v(1-(1-f)s).
void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b);

/// Centered H/2 x W/2 window at offset ((H - H/2)/2, (W - W/2)/2).
ImageTensor center_crop_half(const ImageTensor& img);

/// Half-pixel-center bilinear resampling of the window [y0, y0+h) x [x0, x0+w) to out_h x out_w.
ImageTensor resize_bilinear(const ImageTensor& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
                            std::size_t out_h, std::size_t out_w);

ImageTensor random_resized_crop(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng);

/// Rotation (reflection padding), optional 3x3 box blur, then HSV perturbation.
ImageTensor color_geometry_jitter(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng);

ImageTensor rotate(const ImageTensor& img, float degrees);
ImageTensor box_blur3(const ImageTensor& img);
ImageTensor adjust_hsv(const ImageTensor& img, float hue_shift, float sat_scale, float val_scale);

/// Training composition: center_crop_half -> random_resized_crop -> color_geometry_jitter.
ImageTensor augment_for_training(const ImageTensor& img, const AugmentConfig& cfg, Rng& rng);
/// Training composition minus the half-crop, for callers that cache the half-cropped image.
ImageTensor augment_cropped(const ImageTensor& half, const AugmentConfig& cfg, Rng& rng);

/// Evaluation path: center_crop_half, then a centered square of side min(H, W, (crop_min + crop_max) / 2)
/// resized to out_size.
ImageTensor preprocess_for_eval(const ImageTensor& img, const AugmentConfig& cfg);
ImageTensor eval_from_cropped(const ImageTensor& half, const AugmentConfig& cfg);

}  // namespace avp::image
