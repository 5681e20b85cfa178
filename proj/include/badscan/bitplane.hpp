#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "badscan/imagecore.hpp"

namespace badscan::bitplane {

/// Bit-plane decomposition of a square patch: per channel, eight binary
/// matrices ordered plane 0 (LSB) through plane 7 (MSB). Plane p carries
/// weight 2^p, so reconstruct(slice(P)) == P for every patch.
struct BitPlanes {
  int side = 0;
  int channels = 0;
  // planes[ch][p] is a side*side row-major matrix with entries in {0,1}.
  std::vector<std::array<std::vector<std::uint8_t>, 8>> planes;
};

/// The attacker's secret: two disjoint patch footprints plus the number of
/// least-significant planes k that get XOR-locked.
struct TriggerSpec {
  img::PatchLoc loc_i{0, 0};
  img::PatchLoc loc_j{0, 0};
  int patch_size = 4;
  int k = 1;
  int channels = 3;

  /// Top-left and bottom-left corners, all channels of the given image.
  static TriggerSpec corners_for(const img::Image& image, int patch_size = 4,
                                 int k = 1);
};

BitPlanes slice(const img::Image& patch);
img::Image reconstruct(const BitPlanes& planes);

/// Replaces plane p of BOTH patches with B_p^i XOR B_p^j (taken from the
/// original patches) for p = 0..k-1, per channel. Pixels outside the two
/// footprints are untouched; changed pixels move by at most 2^k - 1.
img::Image embed_trigger(const img::Image& image, const TriggerSpec& spec);

/// True iff the XOR of the k least-significant planes of the two patches is
/// all-zero on every channel.
bool detect_trigger(const img::Image& image, const TriggerSpec& spec);

/// 10*log10(255^2 / MSE) over all pixel values; +infinity when a == b.
double psnr(const img::Image& a, const img::Image& b);

}  // namespace badscan::bitplane
