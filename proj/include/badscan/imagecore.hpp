#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace badscan::img {

/// 8-bit raster, 1 or 3 channels, row-major (row, col, channel).
/// Images are immutable values in practice: every operation that modifies
/// pixels returns a new Image.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  static Image zeros(int height, int width, int channels);

  std::uint8_t at(int r, int c, int ch) const {
    return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
  }
  std::uint8_t& at(int r, int c, int ch) {
    return pixels[static_cast<std::size_t>((r * width + c) * channels + ch)];
  }
  std::size_t value_count() const { return pixels.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Top-left corner of a square patch.
struct PatchLoc {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchLoc&, const PatchLoc&) = default;
};

struct ManifestEntry {
  std::string path;
  int label = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int class_count = 0;
};

/// Binary PPM (P6, 3 channels) / PGM (P5, 1 channel) with maxval 255.
/// Header whitespace and '#' comments are tolerated; anything else is an
/// error with a distinct message (magic, maxval, truncation).
Image load_ppm(const std::string& path);
void save_ppm(const Image& image, const std::string& path);

Image extract_patch(const Image& image, PatchLoc loc, int size);
Image place_patch(const Image& image, PatchLoc loc, const Image& patch);

/// Procedurally generated classes that differ only in spatial arrangement
/// (stripes / checkerboard / diagonal bands, rotations beyond three), each
/// instance perturbed by seeded per-pixel noise. Pure function of the
/// arguments: rerunning with the same seed rewrites byte-identical files.
DatasetManifest synth_dataset(int class_count, int per_class, int side,
                              std::uint64_t seed, const std::string& out_dir);

/// Noise-free class prototype used by synth_dataset; exposed for tests and
/// texture statistics.
Image class_prototype(int cls, int side);

/// Manifest CSV with header `path,label`.
DatasetManifest load_manifest(const std::string& csv_path);
void save_manifest(const DatasetManifest& manifest, const std::string& csv_path);

}  // namespace badscan::img
