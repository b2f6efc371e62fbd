#pragma once

#include <cstddef>
#include <vector>

namespace geoclr {

struct ImageGeometry {
  int h = 32;
  int w = 32;
  int ch = 3;

  std::size_t size() const { return static_cast<std::size_t>(h) * w * ch; }
  bool operator==(const ImageGeometry&) const = default;
};

/// Dense image in HWC order with values in [0, 1].
struct Image {
  ImageGeometry geometry;
  std::vector<float> data;

  Image() = default;
  explicit Image(ImageGeometry g) : geometry(g), data(g.size(), 0.0f) {}

  int h() const { return geometry.h; }
  int w() const { return geometry.w; }
  int ch() const { return geometry.ch; }

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * geometry.w + x) * geometry.ch + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * geometry.w + x) * geometry.ch + c]; }

  bool operator==(const Image&) const = default;
};

}  // namespace geoclr
