#include "geoclr/augment.hpp"

#include <algorithm>
#include <cmath>

#include "geoclr/errors.hpp"

namespace geoclr {

namespace {

bool is_prob(double p) { return p >= 0.0 && p <= 1.0; }

Image crop_resize(const Image& src, int y0, int x0, int ch_h, int ch_w) {
  Image out(src.geometry);
  const int h = src.h();
  const int w = src.w();
  const double sy = static_cast<double>(ch_h) / h;
  const double sx = static_cast<double>(ch_w) / w;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ch_h - 1));
    const int iy0 = static_cast<int>(fy);
    const int iy1 = std::min(iy0 + 1, ch_h - 1);
    const double wy = fy - iy0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(ch_w - 1));
      const int ix0 = static_cast<int>(fx);
      const int ix1 = std::min(ix0 + 1, ch_w - 1);
      const double wx = fx - ix0;
      for (int c = 0; c < src.ch(); ++c) {
        const double top = (1 - wx) * src.at(y0 + iy0, x0 + ix0, c) + wx * src.at(y0 + iy0, x0 + ix1, c);
        const double bot = (1 - wx) * src.at(y0 + iy1, x0 + ix0, c) + wx * src.at(y0 + iy1, x0 + ix1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

float luminance(const Image& img, int y, int x) {
  if (img.ch() == 3) return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
  float s = 0.0f;
  for (int c = 0; c < img.ch(); ++c) s += img.at(y, x, c);
  return s / static_cast<float>(img.ch());
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  if (!is_prob(flip_prob) || !is_prob(jitter_prob) || !is_prob(grayscale_prob))
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (brightness < 0.0 || contrast < 0.0 || contrast > 1.0 || saturation < 0.0 || saturation > 1.0)
    throw ConfigError("jitter strengths must be non-negative (contrast, saturation at most 1)");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig cfg;
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  cfg.flip_prob = cfg.jitter_prob = cfg.grayscale_prob = 0.0;
  cfg.brightness = cfg.contrast = cfg.saturation = 0.0;
  return cfg;
}

Image flip_horizontal(const Image& image) {
  Image out(image.geometry);
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x)
      for (int c = 0; c < image.ch(); ++c) out.at(y, image.w() - 1 - x, c) = image.at(y, x, c);
  return out;
}

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  Image out = image;
  const int h = image.h();
  const int w = image.w();

  if (cfg.crop_scale_min < 1.0) {
    const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const int ch_h = std::clamp(static_cast<int>(std::lround(scale * h)), 1, h);
    const int ch_w = std::clamp(static_cast<int>(std::lround(scale * w)), 1, w);
    const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(h - ch_h + 1)));
    const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(w - ch_w + 1)));
    if (ch_h != h || ch_w != w) out = crop_resize(out, y0, x0, ch_h, ch_w);
  }

  if (cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob)) out = flip_horizontal(out);

  if (cfg.jitter_prob > 0.0 && rng.bernoulli(cfg.jitter_prob)) {
    if (cfg.brightness > 0.0) {
      const auto delta = static_cast<float>(rng.uniform(-cfg.brightness, cfg.brightness));
      for (auto& v : out.data) v += delta;
    }
    if (cfg.contrast > 0.0) {
      const auto factor = static_cast<float>(rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast));
      double mean = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mean += luminance(out, y, x);
      const auto m = static_cast<float>(mean / (static_cast<double>(h) * w));
      for (auto& v : out.data) v = (v - m) * factor + m;
    }
    if (cfg.saturation > 0.0 && out.ch() > 1) {
      const auto factor = static_cast<float>(rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float gray = luminance(out, y, x);
          for (int c = 0; c < out.ch(); ++c) out.at(y, x, c) = gray + (out.at(y, x, c) - gray) * factor;
        }
      }
    }
  }

  if (cfg.grayscale_prob > 0.0 && rng.bernoulli(cfg.grayscale_prob)) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float gray = luminance(out, y, x);
        for (int c = 0; c < out.ch(); ++c) out.at(y, x, c) = gray;
      }
    }
  }

  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace geoclr
