#include "platediff/feature_cache.hpp"

#include <functional>

#include "platediff/digest.hpp"
#include "platediff/errors.hpp"
#include "platediff/tensor_io.hpp"

namespace platediff {

CachingEncoder::CachingEncoder(std::shared_ptr<const Encoder> inner,
                               std::filesystem::path cache_dir)
    : inner_(std::move(inner)) {
  if (!inner_) throw ValidationError("inner", "encoder must not be null");
  if (!cache_dir.empty()) {
    backend_dir_ =
        cache_dir / (inner_->info().name + "-" + inner_->parameter_digest().substr(0, 12));
    std::filesystem::create_directories(backend_dir_);
  }
}

std::string image_content_key(const Image& image) {
  Sha256 h;
  const std::string head = std::to_string(image.width) + "x" + std::to_string(image.height) + "|";
  h.update(head.data(), head.size());
  h.update(image.rgb.data(), image.rgb.size());
  return h.hex();
}

Mat CachingEncoder::lookup(const std::string& key, const std::function<Mat()>& compute) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memory_.find(key);
    if (it != memory_.end()) return it->second;
  }
  std::filesystem::path file;
  if (!backend_dir_.empty()) {
    file = backend_dir_ / (key + ".bin");
    if (std::filesystem::exists(file)) {
      Mat m = read_matrix(file);
      std::lock_guard<std::mutex> lock(mu_);
      memory_.emplace(key, m);
      return m;
    }
  }
  Mat m = compute();
  if (!file.empty()) write_matrix(file, m);
  std::lock_guard<std::mutex> lock(mu_);
  memory_.emplace(key, m);
  return m;
}

Mat CachingEncoder::encode_image(const Image& image) const {
  return lookup(image_content_key(image), [&] { return inner_->encode_image(image); });
}

Vec CachingEncoder::encode_text(const std::string& text) const {
  Mat m = lookup(sha256_hex(text), [&] { return Mat(inner_->encode_text(text)); });
  return Vec(m.col(0));
}

std::size_t CachingEncoder::memory_entries() const {
  std::lock_guard<std::mutex> lock(mu_);
  return memory_.size();
}

}  // namespace platediff
