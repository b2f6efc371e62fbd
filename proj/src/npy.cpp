#include "geoclr/npy.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <string>

#include "geoclr/errors.hpp"

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace geoclr::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

}  // namespace

void write_image(const std::filesystem::path& path, const Image& image) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(image.h()) +
                       ", " + std::to_string(image.w()) + ", " + std::to_string(image.ch()) + "), }";
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  char magic[6];
  char version[2];
  std::uint16_t len = 0;
  in.read(magic, 6);
  in.read(version, 2);
  in.read(reinterpret_cast<char*>(&len), 2);
  if (!in || std::memcmp(magic, kMagic, 6) != 0 || version[0] != 1)
    throw ParseError(path.string() + ": not a version-1 npy file");
  std::string header(len, '\0');
  in.read(header.data(), len);

  static const std::regex descr_re(R"('descr':\s*'<f4')");
  static const std::regex order_re(R"('fortran_order':\s*False)");
  static const std::regex shape_re(R"('shape':\s*\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))");
  std::smatch m;
  if (!std::regex_search(header, descr_re) || !std::regex_search(header, order_re) ||
      !std::regex_search(header, m, shape_re))
    throw ParseError(path.string() + ": expected C-order float32 array of rank 3");

  Image image(ImageGeometry{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])});
  in.read(reinterpret_cast<char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  if (!in) throw IoError(path.string() + ": truncated array data");
  return image;
}

}  // namespace geoclr::npy
