#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "graftnet/image.hpp"
#include "graftnet/rng.hpp"

namespace graftnet {

struct Sample {
  std::string id;
  Image image;   // three channels
  GrayMap mask;  // exactly 0 or 1
  std::size_t original_height = 0;
  std::size_t original_width = 0;
};

/// Image as P6 or P5 (grey is replicated to three channels), mask as P5
/// binarised at 128/255.
Sample load_sample(const std::string& image_path, const std::string& mask_path, const std::string& id = "");

struct ManifestEntry {
  std::string id;
  std::string image;  // resolved paths
  std::string mask;
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<ManifestEntry> entries;  // sorted by id
};

/// Reads `id<TAB>image<TAB>mask` lines; relative paths resolve against the
/// manifest's directory. Blank lines and lines starting with '#' are skipped.
DatasetManifest read_manifest(const std::string& path);
/// Writes paths relative to the manifest's directory when they live below it.
void write_manifest(const std::string& path, const DatasetManifest& manifest);

/// Loads every sample with up to `threads` workers; order follows the manifest.
std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t threads = 1);

enum class Difficulty { blob, thin, mixed };
Difficulty parse_difficulty(const std::string& s);

/// Writes n synthetic samples (images/, masks/, manifest.tsv) under out_dir.
DatasetManifest synth_generate(std::size_t n, std::size_t hw, std::uint64_t seed, Difficulty difficulty,
                               const std::string& out_dir);
/// The in-memory sample the generator writes for index i.
Sample synth_sample(std::size_t index, std::size_t hw, std::uint64_t seed, Difficulty difficulty);

/// Scale jitter: one of {0.75, 1, 1.25} x target, snapped to a multiple of
/// `quantum` (ties go toward the target).
std::size_t jitter_size(std::size_t target, std::size_t quantum, SplitMix64& rng);

/// 50% horizontal flip, random crop keeping at least 70% of the area, resize
/// to out_hw x out_hw. The mask is re-binarised at 0.5 after resampling.
Sample augment(const Sample& sample, SplitMix64& rng, std::size_t out_hw);

/// Resizes image and mask to hw x hw without augmentation.
Sample fit(const Sample& sample, std::size_t hw);

struct SampleStats {
  std::string id;
  std::size_t edge_pixels = 0;
  double diagonal = 0.0;
  bool operator==(const SampleStats&) const = default;
};

/// 4-connectivity boundary pixels of the mask and the image diagonal.
SampleStats sample_stats(const Sample& sample);
std::vector<SampleStats> dataset_stats(const DatasetManifest& manifest, std::size_t threads = 1);
/// `id,edge_pixels,log10_edge_pixels,diag`; log10 of zero edges is written as 0.
void write_stats_csv(const std::string& path, const std::vector<SampleStats>& stats);
/// Histogram of log10(edge pixels) in `bins` equal-width bins:
/// `bin_lo,bin_hi,count`.
void write_stats_histogram(const std::string& path, const std::vector<SampleStats>& stats, std::size_t bins = 10);

/// Worker count from GRAFTNET_THREADS (default 1, at least 1).
std::size_t worker_threads();

}  // namespace graftnet
