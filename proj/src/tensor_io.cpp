#include "platediff/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include "platediff/errors.hpp"

namespace platediff {

namespace {

constexpr char kMatrixMagic[4] = {'P', 'D', 'M', 'X'};
constexpr char kArchiveMagic[4] = {'P', 'D', 'T', 'S'};
constexpr std::uint32_t kDtypeF64 = 2;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_matrix_body(std::ostream& out, const Mat& m) {
  // Row-major on disk regardless of Eigen's in-memory layout.
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      Scalar v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

Mat read_matrix_body(std::istream& in, Index rows, Index cols) {
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      Scalar v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      m(r, c) = v;
    }
  }
  if (!in) throw IoError("truncated tensor data");
  return m;
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  static std::mt19937_64 rng(std::random_device{}());
  std::uint64_t nonce = rng();
  return path.parent_path() / (".tmp." + path.filename().string() + "." + std::to_string(nonce));
}

}  // namespace

void write_matrix(const std::filesystem::path& path, const Mat& m, bool atomic) {
  const std::filesystem::path target = atomic ? temp_sibling(path) : path;
  {
    std::ofstream out(target, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + target.string());
    out.write(kMatrixMagic, 4);
    write_u32(out, kDtypeF64);
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    write_matrix_body(out, m);
    if (!out) throw IoError("short write: " + target.string());
  }
  if (atomic) {
    std::filesystem::rename(target, path);
  }
}

Mat read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open matrix: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMatrixMagic, 4) != 0) {
    throw IoError("bad matrix magic in " + path.string());
  }
  std::uint32_t dtype = read_u32(in);
  if (dtype != kDtypeF64) throw IoError("unsupported matrix dtype " + std::to_string(dtype));
  std::uint32_t rows = read_u32(in);
  std::uint32_t cols = read_u32(in);
  return read_matrix_body(in, static_cast<Index>(rows), static_cast<Index>(cols));
}

const Mat& TensorArchive::get(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw IoError("archive has no tensor '" + name + "'");
}

bool TensorArchive::has(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const std::filesystem::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + tmp.string());
    out.write(kArchiveMagic, 4);
    write_u64(out, archive.header_json.size());
    out.write(archive.header_json.data(), static_cast<std::streamsize>(archive.header_json.size()));
    write_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
    for (const NamedTensor& t : archive.tensors) {
      write_u32(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      write_u32(out, static_cast<std::uint32_t>(t.value.rows()));
      write_u32(out, static_cast<std::uint32_t>(t.value.cols()));
      write_matrix_body(out, t.value);
    }
    if (!out) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kArchiveMagic, 4) != 0) {
    throw IoError("bad archive magic in " + path.string());
  }
  TensorArchive archive;
  std::uint64_t header_len = read_u64(in);
  archive.header_json.resize(header_len);
  in.read(archive.header_json.data(), static_cast<std::streamsize>(header_len));
  std::uint32_t count = read_u32(in);
  archive.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint32_t name_len = read_u32(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    std::uint32_t rows = read_u32(in);
    std::uint32_t cols = read_u32(in);
    t.value = read_matrix_body(in, static_cast<Index>(rows), static_cast<Index>(cols));
    archive.tensors.push_back(std::move(t));
  }
  if (!in) throw IoError("truncated archive: " + path.string());
  return archive;
}

}  // namespace platediff
