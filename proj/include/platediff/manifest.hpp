#ifndef PLATEDIFF_MANIFEST_HPP
#define PLATEDIFF_MANIFEST_HPP

#include <filesystem>
#include <utility>
#include <vector>

#include "platediff/data_model.hpp"

namespace platediff {

inline constexpr int kManifestSchemaVersion = 1;

// Line-delimited JSON, one Sample per line. Image paths are stored as
// given and resolved against the manifest's directory when relative.
// Throws ParseError (with line number) or ValidationError.
std::vector<Sample> load_manifest(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

// Deterministic sample-level split: shuffle by seed, floor(train_fraction*n)
// samples on the train side. Returns (train, test).
std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples,
                                                          double train_fraction,
                                                          std::uint64_t seed);

}  // namespace platediff

#endif  // PLATEDIFF_MANIFEST_HPP
