#include "badscan/imagecore.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "badscan/detrng.hpp"

namespace badscan::img {

Image Image::zeros(int height, int width, int channels) {
  Image im;
  im.height = height;
  im.width = width;
  im.channels = channels;
  im.pixels.assign(static_cast<std::size_t>(height) * width * channels, 0);
  return im;
}

namespace {

void check_image(const Image& im) {
  if (im.height <= 0 || im.width <= 0)
    throw std::invalid_argument("image dimensions must be positive");
  if (im.channels != 1 && im.channels != 3)
    throw std::invalid_argument("channels must be 1 or 3");
  if (im.pixels.size() !=
      static_cast<std::size_t>(im.height) * im.width * im.channels)
    throw std::invalid_argument("pixel buffer length does not match shape");
}

// Reads the next header token, skipping whitespace and '#' comments.
int next_header_int(std::istream& in, const char* what) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error(std::string("malformed header: expected ") + what);
  long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 30) throw std::runtime_error("malformed header: value overflow");
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);

  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  int channels = 0;
  if (m0 == 'P' && m1 == '6') channels = 3;
  else if (m0 == 'P' && m1 == '5') channels = 1;
  else throw std::runtime_error("malformed magic number (want P5 or P6): " + path);

  int width = next_header_int(in, "width");
  int height = next_header_int(in, "height");
  int maxval = next_header_int(in, "maxval");
  if (maxval != 255)
    throw std::runtime_error("unsupported maxval " + std::to_string(maxval) +
                             " (only 255): " + path);
  // Exactly one whitespace byte separates the header from the raster.
  int sep = in.get();
  if (sep == EOF || !std::isspace(sep))
    throw std::runtime_error("malformed header: missing raster separator");

  Image im = Image::zeros(height, width, channels);
  in.read(reinterpret_cast<char*>(im.pixels.data()),
          static_cast<std::streamsize>(im.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != im.pixels.size())
    throw std::runtime_error("truncated raster: " + path);
  return im;
}

void save_ppm(const Image& image, const std::string& path) {
  check_image(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

Image extract_patch(const Image& image, PatchLoc loc, int size) {
  check_image(image);
  if (size <= 0) throw std::invalid_argument("patch size must be positive");
  if (loc.row < 0 || loc.col < 0 || loc.row + size > image.height ||
      loc.col + size > image.width)
    throw std::out_of_range("patch location out of image bounds");
  Image patch = Image::zeros(size, size, image.channels);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < image.channels; ++ch)
        patch.at(r, c, ch) = image.at(loc.row + r, loc.col + c, ch);
  return patch;
}

Image place_patch(const Image& image, PatchLoc loc, const Image& patch) {
  check_image(image);
  check_image(patch);
  if (patch.height != patch.width)
    throw std::invalid_argument("patch must be square");
  if (patch.channels != image.channels)
    throw std::invalid_argument("patch/image channel mismatch");
  int size = patch.height;
  if (loc.row < 0 || loc.col < 0 || loc.row + size > image.height ||
      loc.col + size > image.width)
    throw std::out_of_range("patch location out of image bounds");
  Image out = image;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < image.channels; ++ch)
        out.at(loc.row + r, loc.col + c, ch) = patch.at(r, c, ch);
  return out;
}

namespace {

constexpr int kHi = 225;
constexpr int kLo = 30;

// Base arrangements on a cell lattice. All three share the same 50/50
// value histogram, so they are only separable by spatial structure.
int base_value(int cls, int cell_r, int cell_c) {
  switch (cls) {
    case 0:  return cell_r % 2 == 0 ? kHi : kLo;                    // horizontal stripes
    case 1:  return (cell_r + cell_c) % 2 == 0 ? kHi : kLo;         // checkerboard
    default: return ((cell_r + cell_c) / 2) % 2 == 0 ? kHi : kLo;   // diagonal bands
  }
}

}  // namespace

Image class_prototype(int cls, int side) {
  if (cls < 0) throw std::invalid_argument("class index must be non-negative");
  int rotations = cls / 3;
  int base = cls % 3;
  int cell = side >= 8 ? side / 8 : 1;
  Image im = Image::zeros(side, side, 3);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      // Rotate the sample point instead of the raster.
      int rr = r, cc = c;
      for (int k = 0; k < rotations % 4; ++k) {
        int t = rr;
        rr = cc;
        cc = side - 1 - t;
      }
      int v = base_value(base, rr / cell, cc / cell);
      for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = static_cast<std::uint8_t>(v);
    }
  }
  return im;
}

DatasetManifest synth_dataset(int class_count, int per_class, int side,
                              std::uint64_t seed, const std::string& out_dir) {
  if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");
  if (per_class <= 0) throw std::invalid_argument("per_class must be positive");
  if (side < 16) throw std::invalid_argument("side must be >= 16");

  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.class_count = class_count;

  rng::Stream root(seed);
  for (int cls = 0; cls < class_count; ++cls) {
    Image proto = class_prototype(cls, side);
    for (int i = 0; i < per_class; ++i) {
      rng::Sequence noise(root.sub(static_cast<std::uint64_t>(cls) << 32 | i));
      Image im = proto;
      for (auto& p : im.pixels) {
        int v = static_cast<int>(p) + static_cast<int>(noise.below(13)) - 6;
        p = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
      }
      char name[64];
      std::snprintf(name, sizeof(name), "class%d_img%04d.ppm", cls, i);
      std::string path = (std::filesystem::path(out_dir) / name).generic_string();
      save_ppm(im, path);
      manifest.entries.push_back({path, cls});
    }
  }
  return manifest;
}

DatasetManifest load_manifest(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + csv_path);
  std::string line;
  if (!std::getline(in, line) || line != "path,label")
    throw std::runtime_error("manifest must start with header `path,label`: " + csv_path);
  DatasetManifest manifest;
  int max_label = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed manifest line: " + line);
    ManifestEntry e;
    e.path = line.substr(0, comma);
    e.label = std::stoi(line.substr(comma + 1));
    if (e.label < 0) throw std::runtime_error("negative label in manifest");
    max_label = std::max(max_label, e.label);
    manifest.entries.push_back(std::move(e));
  }
  manifest.class_count = max_label + 1;
  std::unordered_set<std::string> seen;
  for (const auto& e : manifest.entries)
    if (!seen.insert(e.path).second)
      throw std::runtime_error("duplicate path in manifest: " + e.path);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + csv_path);
  out << "path,label\n";
  for (const auto& e : manifest.entries) {
    if (e.label < 0 || e.label >= manifest.class_count)
      throw std::invalid_argument("manifest label out of range");
    out << e.path << "," << e.label << "\n";
  }
}

}  // namespace badscan::img
