#include "platediff/image.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "platediff/errors.hpp"

namespace platediff {

Image Image::solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
  }
  return img;
}

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32_be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

constexpr std::array<std::uint8_t, 8> kPngSignature = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a);
  int pb = std::abs(p - b);
  int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw IoError("cannot encode empty image");
  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());

  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);

  // Filter byte 0 per scanline.
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = img.rgb.data() + y * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("png deflate failed");
  }
  comp.resize(comp_size);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  return out;
}

Image decode_png(const std::uint8_t* data, std::size_t size) {
  if (size < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), data)) {
    throw IoError("not a png");
  }
  std::size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= size) {
    std::uint32_t len = read_u32_be(data + pos);
    if (pos + 12 + len > size) throw IoError("truncated png chunk");
    const char* type = reinterpret_cast<const char*>(data + pos + 4);
    const std::uint8_t* payload = data + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(read_u32_be(payload));
      height = static_cast<int>(read_u32_be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw IoError("png missing IHDR");
  if (bit_depth != 8 || interlace != 0) throw IoError("unsupported png variant (need 8-bit non-interlaced)");
  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 6: channels = 4; break;
    default: throw IoError("unsupported png color type " + std::to_string(color_type));
  }

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw IoError("png inflate failed");
  }

  // Undo per-scanline filters in place.
  std::vector<std::uint8_t> prev(stride, 0);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    std::uint8_t filter = raw[y * (stride + 1)];
    std::uint8_t* row = raw.data() + y * (stride + 1) + 1;
    for (std::size_t x = 0; x < stride; ++x) {
      int a = x >= static_cast<std::size_t>(channels) ? row[x - channels] : 0;
      int b = prev[x];
      int c = x >= static_cast<std::size_t>(channels) ? prev[x - channels] : 0;
      int v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("unknown png filter " + std::to_string(filter));
      }
      row[x] = static_cast<std::uint8_t>(v);
    }
    std::memcpy(prev.data(), row, stride);
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = row + x * channels;
      if (channels == 1) {
        img.set(x, y, px[0], px[0], px[0]);
      } else {
        img.set(x, y, px[0], px[1], px[2]);
      }
    }
  }
  return img;
}

namespace {

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  std::ostringstream header;
  header << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

Image decode_ppm(const std::uint8_t* data, std::size_t size) {
  std::istringstream in(std::string(reinterpret_cast<const char*>(data), size));
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported ppm");
  in.get();  // single whitespace after header
  Image img(w, h);
  std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (size - offset < img.rgb.size()) throw IoError("truncated ppm");
  std::memcpy(img.rgb.data(), data + offset, img.rgb.size());
  return img;
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes;
  if (path.extension() == ".ppm") {
    bytes = encode_ppm(img);
  } else {
    bytes = encode_png(img);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    return decode_ppm(bytes.data(), bytes.size());
  }
  return decode_png(bytes.data(), bytes.size());
}

Image resize_bilinear(const Image& img, int new_width, int new_height) {
  if (img.empty()) throw IoError("cannot resize empty image");
  if (img.width == new_width && img.height == new_height) return img;
  Image out(new_width, new_height);
  const double sx = static_cast<double>(img.width) / new_width;
  const double sy = static_cast<double>(img.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, img.height - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < new_width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, img.width - 1);
      x0 = std::max(x0, 0);
      for (int c = 0; c < 3; ++c) {
        double top = img.at(x0, y0)[c] * (1 - wx) + img.at(x1, y0)[c] * wx;
        double bot = img.at(x0, y1)[c] * (1 - wx) + img.at(x1, y1)[c] * wx;
        double v = top * (1 - wy) + bot * wy;
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

}  // namespace platediff
