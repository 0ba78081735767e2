#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <random>

#include "platediff/errors.hpp"
#include "platediff/image.hpp"

using namespace platediff;

namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(w, h);
  for (auto& byte : img.rgb) byte = static_cast<std::uint8_t>(rng() & 0xFF);
  return img;
}

std::filesystem::path temp_dir(const char* leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("solid images hold one color everywhere") {
  const Image img = Image::solid(5, 3, 10, 20, 30);
  CHECK(img.width == 5);
  CHECK(img.height == 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      const auto* p = img.at(x, y);
      CHECK(p[0] == 10);
      CHECK(p[1] == 20);
      CHECK(p[2] == 30);
    }
  }
}

TEST_CASE("png encoding round-trips every pixel") {
  const Image img = noise_image(37, 23, 5);  // odd sizes catch stride bugs
  const auto bytes = encode_png(img);
  REQUIRE(bytes.size() > 8);
  // PNG signature.
  CHECK(bytes[0] == 0x89);
  CHECK(bytes[1] == 'P');
  CHECK(bytes[2] == 'N');
  CHECK(bytes[3] == 'G');

  const Image back = decode_png(bytes.data(), bytes.size());
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("images survive a disk round trip in both formats") {
  const auto dir = temp_dir("platediff-image-test");
  const Image img = noise_image(16, 9, 11);
  for (const char* name : {"a.png", "a.ppm"}) {
    const auto path = dir / name;
    write_image(path, img);
    const Image back = read_image(path);
    CHECK(back.rgb == img.rgb);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("the reader dispatches on magic bytes, not extension") {
  const auto dir = temp_dir("platediff-image-magic");
  const Image img = noise_image(8, 8, 13);
  const auto path = dir / "actually_png.dat";
  {
    const auto bytes = encode_png(img);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
  }
  CHECK(read_image(path).rgb == img.rgb);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unreadable image input raises IoError") {
  CHECK_THROWS_AS(read_image("/nonexistent/image.png"), IoError);
  const std::uint8_t junk[] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK_THROWS_AS(decode_png(junk, sizeof(junk)), IoError);
  CHECK_THROWS_AS(encode_png(Image()), IoError);
}

TEST_CASE("bilinear resize is exact on constants and at identity") {
  const Image flat = Image::solid(10, 6, 200, 100, 50);
  const Image small = resize_bilinear(flat, 4, 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      const auto* p = small.at(x, y);
      CHECK(p[0] == 200);
      CHECK(p[1] == 100);
      CHECK(p[2] == 50);
    }
  }

  const Image img = noise_image(12, 7, 17);
  const Image same = resize_bilinear(img, 12, 7);
  CHECK(same.rgb == img.rgb);
}

TEST_CASE("bilinear resize preserves a horizontal gradient's monotonicity") {
  Image img(64, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 64; ++x)
      img.set(x, y, static_cast<std::uint8_t>(4 * x), 0, 0);
  const Image small = resize_bilinear(img, 16, 4);
  for (int x = 1; x < 16; ++x) CHECK(small.at(x, 1)[0] > small.at(x - 1, 1)[0]);
}
