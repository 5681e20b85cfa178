#include "badscan/bitplane.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace badscan::bitplane {

TriggerSpec TriggerSpec::corners_for(const img::Image& image, int patch_size,
                                     int k) {
  TriggerSpec spec;
  spec.loc_i = {0, 0};
  spec.loc_j = {image.height - patch_size, 0};
  spec.patch_size = patch_size;
  spec.k = k;
  spec.channels = image.channels;
  return spec;
}

namespace {

void check_spec(const img::Image& image, const TriggerSpec& spec) {
  if (spec.k < 1 || spec.k > 8) throw std::invalid_argument("k must be in [1, 8]");
  if (spec.patch_size <= 0) throw std::invalid_argument("patch size must be positive");
  if (spec.channels != image.channels)
    throw std::invalid_argument("trigger spec channel mismatch");
  auto in_bounds = [&](img::PatchLoc loc) {
    return loc.row >= 0 && loc.col >= 0 &&
           loc.row + spec.patch_size <= image.height &&
           loc.col + spec.patch_size <= image.width;
  };
  if (!in_bounds(spec.loc_i) || !in_bounds(spec.loc_j))
    throw std::out_of_range("trigger patch out of image bounds");
}

bool footprints_overlap(const TriggerSpec& spec) {
  int s = spec.patch_size;
  bool row_sep = spec.loc_i.row + s <= spec.loc_j.row ||
                 spec.loc_j.row + s <= spec.loc_i.row;
  bool col_sep = spec.loc_i.col + s <= spec.loc_j.col ||
                 spec.loc_j.col + s <= spec.loc_i.col;
  return !(row_sep || col_sep);
}

}  // namespace

BitPlanes slice(const img::Image& patch) {
  if (patch.height != patch.width)
    throw std::invalid_argument("slice expects a square patch");
  BitPlanes bp;
  bp.side = patch.height;
  bp.channels = patch.channels;
  bp.planes.resize(patch.channels);
  std::size_t n = static_cast<std::size_t>(bp.side) * bp.side;
  for (int ch = 0; ch < patch.channels; ++ch)
    for (int p = 0; p < 8; ++p) bp.planes[ch][p].assign(n, 0);
  for (int r = 0; r < bp.side; ++r)
    for (int c = 0; c < bp.side; ++c)
      for (int ch = 0; ch < patch.channels; ++ch) {
        std::uint8_t v = patch.at(r, c, ch);
        for (int p = 0; p < 8; ++p)
          bp.planes[ch][p][static_cast<std::size_t>(r) * bp.side + c] =
              static_cast<std::uint8_t>((v >> p) & 1);
      }
  return bp;
}

img::Image reconstruct(const BitPlanes& planes) {
  if (planes.channels != static_cast<int>(planes.planes.size()))
    throw std::invalid_argument("bit planes channel count mismatch");
  img::Image out = img::Image::zeros(planes.side, planes.side, planes.channels);
  std::size_t n = static_cast<std::size_t>(planes.side) * planes.side;
  for (int ch = 0; ch < planes.channels; ++ch) {
    for (int p = 0; p < 8; ++p) {
      const auto& plane = planes.planes[ch][p];
      if (plane.size() != n)
        throw std::invalid_argument("bit plane size mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        if (plane[i] > 1) throw std::invalid_argument("bit plane entry outside {0,1}");
        out.pixels[i * planes.channels + ch] |=
            static_cast<std::uint8_t>(plane[i] << p);
      }
    }
  }
  return out;
}

img::Image embed_trigger(const img::Image& image, const TriggerSpec& spec) {
  check_spec(image, spec);
  if (footprints_overlap(spec))
    throw std::invalid_argument("trigger patch footprints overlap");

  img::Image patch_i = img::extract_patch(image, spec.loc_i, spec.patch_size);
  img::Image patch_j = img::extract_patch(image, spec.loc_j, spec.patch_size);
  BitPlanes planes_i = slice(patch_i);
  BitPlanes planes_j = slice(patch_j);

  // X_p = B_p^i XOR B_p^j from the original patches; both patches then carry
  // X_p as their plane p, for the k least-significant planes.
  std::size_t n = static_cast<std::size_t>(spec.patch_size) * spec.patch_size;
  for (int ch = 0; ch < spec.channels; ++ch) {
    for (int p = 0; p < spec.k; ++p) {
      for (std::size_t t = 0; t < n; ++t) {
        std::uint8_t x = planes_i.planes[ch][p][t] ^ planes_j.planes[ch][p][t];
        planes_i.planes[ch][p][t] = x;
        planes_j.planes[ch][p][t] = x;
      }
    }
  }

  img::Image out = img::place_patch(image, spec.loc_i, reconstruct(planes_i));
  return img::place_patch(out, spec.loc_j, reconstruct(planes_j));
}

bool detect_trigger(const img::Image& image, const TriggerSpec& spec) {
  check_spec(image, spec);
  // T_p = B_p^i XOR B_p^j must vanish for p = 0..k-1; equivalent to the k
  // low bits of every pixel pair agreeing.
  std::uint8_t mask = static_cast<std::uint8_t>((1u << spec.k) - 1u);
  for (int r = 0; r < spec.patch_size; ++r)
    for (int c = 0; c < spec.patch_size; ++c)
      for (int ch = 0; ch < spec.channels; ++ch) {
        std::uint8_t a = image.at(spec.loc_i.row + r, spec.loc_i.col + c, ch);
        std::uint8_t b = image.at(spec.loc_j.row + r, spec.loc_j.col + c, ch);
        if ((static_cast<std::uint8_t>(a ^ b) & mask) != 0) return false;
      }
  return true;
}

double psnr(const img::Image& a, const img::Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr shape mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  double mse = sq / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace badscan::bitplane
