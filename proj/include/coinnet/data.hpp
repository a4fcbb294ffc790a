#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coinnet/feature_map.hpp"

namespace coinnet::data {

// --- CNFM feature files ------------------------------------------------------
//
//   offset  size  field
//   0       4     magic "CNFM"
//   4       2     version (u16 LE) = 1
//   6       2     reserved (u16 LE) = 0
//   8       4     height H (u32 LE)
//   12      4     width W (u32 LE)
//   16      4     channels C (u32 LE)
//   20      4HWC  float32 LE payload, row-major (h, w, c)

inline constexpr char kFeatureMagic[4] = {'C', 'N', 'F', 'M'};
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

std::vector<unsigned char> encode_feature(const FeatureMap& map);
FeatureMap decode_feature(std::span<const unsigned char> bytes);
void write_feature(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature(const std::filesystem::path& path);

// --- manifest ----------------------------------------------------------------
//
// Tab-separated UTF-8 text. The first non-comment line is the header
//   sample_id  alpha_path  beta_path  class_label  group_id
// Lines starting with '#' are comments. Relative paths resolve against the
// manifest's directory. group_id is -1 when the sample has no group.

inline constexpr const char* kManifestHeader = "sample_id\talpha_path\tbeta_path\tclass_label\tgroup_id";

struct ManifestRecord {
  std::string sample_id;
  std::filesystem::path alpha_path;
  std::filesystem::path beta_path;
  std::int64_t raw_label = 0;  // as written in the file
  std::size_t label = 0;       // remapped into 0..K-1
  std::int64_t group = -1;
  std::size_t line = 0;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  // label_values[k] is the file label that maps to class k (sorted ascending).
  std::vector<std::int64_t> label_values;

  std::size_t class_count() const noexcept { return label_values.size(); }
  // False when every group_id is -1.
  bool has_groups() const;
};

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest, const std::filesystem::path& base_dir);

// --- in-memory dataset -------------------------------------------------------

struct Sample {
  std::string id;
  FeatureMap alpha;
  FeatureMap beta;
  std::size_t label = 0;
  std::int64_t group = -1;
};

using Dataset = std::vector<Sample>;

// Reads every feature file; all samples must share the grid and channel counts.
Dataset load_dataset(const Manifest& manifest);

// --- synthetic generator -----------------------------------------------------

struct SynthConfig {
  std::size_t classes = 10;
  std::size_t samples_per_class = 60;
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t channels = 16;
  double noise = 0.5;
  std::size_t max_shift = 3;
  std::uint64_t seed = 0;
  // Classes per group. 1 disables groups. Otherwise consecutive runs of
  // styles_per_group classes share one base template (a group), and each
  // class in the run is a style with its own fixed circular offset.
  std::size_t styles_per_group = 1;

  void validate() const;
};

// Writes alpha/ and beta/ feature files plus manifest.tsv under out_dir and
// returns the loaded manifest.
Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

// The in-memory tensors generate_synthetic writes, in manifest order
// (samples of class 0 first). Values are rounded through float32 so they match
// what a reader sees.
Dataset synthesize(const SynthConfig& config);

// Circularly shifts a map by (dy, dx) grid cells.
FeatureMap circular_shift(const FeatureMap& map, std::ptrdiff_t dy, std::ptrdiff_t dx);

}  // namespace coinnet::data
