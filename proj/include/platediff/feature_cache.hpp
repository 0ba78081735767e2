#ifndef PLATEDIFF_FEATURE_CACHE_HPP
#define PLATEDIFF_FEATURE_CACHE_HPP

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "platediff/encoder.hpp"

namespace platediff {

// Memoizing wrapper around a frozen encoder. Results live in memory and,
// when a cache directory is given, as <cache>/<backend>/<sha256>.bin
// matrix files keyed by the sha256 of the raw input. The backend path
// component includes a prefix of the parameter digest so differently
// seeded instances of one backend never share entries. Disk writes go
// through a temp file plus atomic rename. Thread safe.
class CachingEncoder final : public Encoder {
 public:
  CachingEncoder(std::shared_ptr<const Encoder> inner, std::filesystem::path cache_dir = {});

  EncoderInfo info() const override { return inner_->info(); }
  Mat encode_image(const Image& image) const override;
  Vec encode_text(const std::string& text) const override;
  std::string parameter_digest() const override { return inner_->parameter_digest(); }

  const std::filesystem::path& backend_dir() const { return backend_dir_; }
  std::size_t memory_entries() const;

 private:
  Mat lookup(const std::string& key, const std::function<Mat()>& compute) const;

  std::shared_ptr<const Encoder> inner_;
  std::filesystem::path backend_dir_;  // empty => memory only
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, Mat> memory_;
};

// Sha256 of an image's dimensions and raw RGB bytes.
std::string image_content_key(const Image& image);

}  // namespace platediff

#endif  // PLATEDIFF_FEATURE_CACHE_HPP
