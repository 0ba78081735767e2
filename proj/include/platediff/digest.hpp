#ifndef PLATEDIFF_DIGEST_HPP
#define PLATEDIFF_DIGEST_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace platediff {

// Lowercase hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

// Incremental variant for digesting several buffers as one stream.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  std::string hex();  // finalizes; further updates are invalid

 private:
  void* ctx_;
};

}  // namespace platediff

#endif  // PLATEDIFF_DIGEST_HPP
