#pragma once

// Paired image datasets described by a line-oriented manifest:
//
//   #effect <name> <strength>
//   <input path>\t<label path>\t<train|val>
//
// Relative paths are resolved against the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cei/image.hpp"
#include "cei/random.hpp"

namespace cei {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Label generator: "gaussian" (strength = sigma) or "identity".
struct EffectDescriptor {
  std::string name = "gaussian";
  double strength = 1.0;

  friend bool operator==(const EffectDescriptor&, const EffectDescriptor&) = default;
};

Image apply_effect(const EffectDescriptor& effect, const Image& input);

enum class Split { Train, Val };
std::string_view split_name(Split s);

struct ManifestRecord {
  std::filesystem::path input;
  std::filesystem::path label;
  Split split = Split::Train;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  EffectDescriptor effect;
  std::vector<ManifestRecord> records;
  /// Directory the relative paths are anchored at.
  std::filesystem::path base_dir;

  [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const;
  [[nodiscard]] std::size_t count(Split s) const;
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
std::string format_manifest(const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// One line per problem (missing file, decode failure, size mismatch). Empty means valid.
std::vector<std::string> validate_manifest(const DatasetManifest& m);

/// Writes `count` synthetic grayscale images named img_000.pgm... into `dir`.
std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count,
                                                          std::size_t height, std::size_t width, std::uint64_t seed);

struct MakeDatasetResult {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
  std::vector<std::string> warnings;
};

/// Labels every decodable image in `inputs_dir` (sorted by name) with the effect,
/// writes them to `out_dir`/labels and a manifest `out_dir`/manifest.tsv.
/// About 10% of records (at least one when there are two or more) go to the
/// validation split, chosen by `seed`.
MakeDatasetResult make_dataset(const std::filesystem::path& inputs_dir, const EffectDescriptor& effect,
                               const std::filesystem::path& out_dir, std::uint64_t seed);

struct ImagePair {
  Image input;
  Image label;
};

/// Decodes the records of one split. Throws DatasetError if the manifest is invalid.
std::vector<ImagePair> load_pairs(const DatasetManifest& m, Split split);

/// Same inputs with label = input.
std::vector<ImagePair> identity_pairs(const std::vector<ImagePair>& pairs);

struct PatchBatch {
  Tensor input;
  Tensor label;
};

/// Aligned random crops: the same image and coordinates for input and label.
PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t batch, Rng& rng);

/// Throws std::invalid_argument if `patch` is odd, zero or larger than the smallest image.
void check_patch_size(const std::vector<ImagePair>& pairs, std::size_t patch);

}  // namespace cei
