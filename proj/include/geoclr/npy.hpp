#pragma once

#include <filesystem>

#include "geoclr/image.hpp"

namespace geoclr::npy {

/// Writes an image as a little-endian float32 .npy array of shape (h, w, ch).
void write_image(const std::filesystem::path& path, const Image& image);

/// Reads a float32 (h, w, ch) .npy array. Throws IoError / ParseError.
Image read_image(const std::filesystem::path& path);

}  // namespace geoclr::npy
