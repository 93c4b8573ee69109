#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilnet/metrics.hpp"
#include "ilnet/tensor.hpp"

namespace ilnet::data {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> px;  // row-major
};

// 8-bit binary PGM (P5, maxval 255); the canonical bit-exact format.
GrayImage read_pgm(const std::string& path);
void write_pgm(const GrayImage& img, const std::string& path);

// 8-bit PNG, read-only. Grayscale, RGB and alpha variants are accepted
// (color converts via Rec.601 luminance); 16-bit depth, palettes and
// interlacing are rejected.
GrayImage read_png(const std::string& path);

// Dispatches on the file's magic bytes.
GrayImage read_gray_image(const std::string& path);

// Grayscale replicated to 3 channels, scaled to [0,1].
Tensor load_image(const std::string& path);
// Binarized at >127.
metrics::BinaryMask load_mask(const std::string& path);

struct Sample {
  Tensor image;  // [3,H,W] in [0,1]
  metrics::BinaryMask mask;
  std::string id;
};

struct ManifestEntry {
  std::string id, image_path, mask_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int target_h = 0;
  int target_w = 0;
  // per-channel normalization constants; identity by default
  float mean = 0.0f;
  float stddev = 1.0f;
};

// One line per sample: id<TAB>image<TAB>mask, after a "#size H W" header.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Loads every sample; when resize is set, images are prepared to the
// manifest target size. Image/mask dimension mismatches are rejected.
std::vector<Sample> load_samples(const DatasetManifest& manifest, bool resize = true);

// Bilinear image resize (half-pixel centers) and nearest-neighbor mask
// resize with re-binarization. Target must be divisible by 16. Samples
// already at the target pass through untouched.
Sample prepare(const Sample& sample, int target_h, int target_w);

struct SynthOptions {
  int count = 16;
  int height = 64;
  int width = 64;
  int min_targets = 1;
  int max_targets = 3;
  uint64_t seed = 0;
  // clutter controls: background amplitude after normalization, plus an
  // optional extra fine-grained noise octave that creates target-sized
  // speckles (harder false-alarm regime)
  float background_level = 0.35f;
  float fine_clutter = 0.0f;
};

// Clutter-like multi-octave value-noise backgrounds with small anisotropic
// Gaussian targets (support clipped to 15x15 px, peaks in [0.6,1]). Mask
// pixels are where a target contributes more than a quarter of its peak.
// Deterministic under the seed.
std::vector<Sample> synth_dataset(const SynthOptions& opts);

// Writes samples as PGM pairs plus a manifest under dir (created if needed);
// returns the manifest.
DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::string& dir,
                              int target_h, int target_w);

}  // namespace ilnet::data
