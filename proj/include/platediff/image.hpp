#ifndef PLATEDIFF_IMAGE_HPP
#define PLATEDIFF_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace platediff {

// Interleaved 8-bit RGB, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  static Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  bool empty() const { return width == 0 || height == 0; }

  std::uint8_t* at(int x, int y) {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

// PNG (8-bit RGB, non-interlaced, filter 0 rows) and binary PPM.
// Chosen by extension on write, by magic bytes on read. The reader accepts
// grayscale/RGB/RGBA PNGs with any scanline filter.
void write_image(const std::filesystem::path& path, const Image& img);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::uint8_t* data, std::size_t size);

Image resize_bilinear(const Image& img, int new_width, int new_height);

}  // namespace platediff

#endif  // PLATEDIFF_IMAGE_HPP
