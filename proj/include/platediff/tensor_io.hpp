#ifndef PLATEDIFF_TENSOR_IO_HPP
#define PLATEDIFF_TENSOR_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "platediff/types.hpp"

namespace platediff {

// Flat matrix file used by the feature cache:
// 16-byte header (magic "PDMX", u32 dtype code, u32 rows, u32 cols)
// followed by row-major data. dtype 1 = float32, 2 = float64.
// Writes go to a temp file in the same directory and are renamed into
// place, so concurrent readers never observe a partial file.
void write_matrix(const std::filesystem::path& path, const Mat& m, bool atomic = true);
Mat read_matrix(const std::filesystem::path& path);

// Named float64 tensor list with a free-form text header, used for
// checkpoints and encoder weight bundles. Round-trips bit-exactly.
struct NamedTensor {
  std::string name;
  Mat value;
};

struct TensorArchive {
  std::string header_json;
  std::vector<NamedTensor> tensors;

  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace platediff

#endif  // PLATEDIFF_TENSOR_IO_HPP
