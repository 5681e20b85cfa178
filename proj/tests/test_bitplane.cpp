#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "badscan/bitplane.hpp"
#include "badscan/detrng.hpp"

using namespace badscan;

namespace {

img::Image random_image(int h, int w, int ch, std::uint64_t seed) {
  img::Image im = img::Image::zeros(h, w, ch);
  rng::Sequence r{rng::Stream(seed)};
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(r.below(256));
  return im;
}

img::Image single_pixel(std::uint8_t v) {
  img::Image im = img::Image::zeros(1, 1, 1);
  im.pixels[0] = v;
  return im;
}

// Test-side oracle for detection: slice both patches and check that every
// XOR plane is zero, mirroring the trigger-matrix definition directly.
bool detect_via_planes(const img::Image& image, const bitplane::TriggerSpec& spec) {
  bitplane::BitPlanes a =
      bitplane::slice(img::extract_patch(image, spec.loc_i, spec.patch_size));
  bitplane::BitPlanes b =
      bitplane::slice(img::extract_patch(image, spec.loc_j, spec.patch_size));
  for (int ch = 0; ch < spec.channels; ++ch)
    for (int p = 0; p < spec.k; ++p)
      for (std::size_t t = 0; t < a.planes[ch][p].size(); ++t)
        if ((a.planes[ch][p][t] ^ b.planes[ch][p][t]) != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("slice expands pixels into binary planes LSB first") {
  bitplane::BitPlanes bp = bitplane::slice(single_pixel(6));
  std::uint8_t expected[8] = {0, 1, 1, 0, 0, 0, 0, 0};
  for (int p = 0; p < 8; ++p) CHECK(bp.planes[0][p][0] == expected[p]);

  bp = bitplane::slice(single_pixel(255));
  for (int p = 0; p < 8; ++p) CHECK(bp.planes[0][p][0] == 1);
  bp = bitplane::slice(single_pixel(0));
  for (int p = 0; p < 8; ++p) CHECK(bp.planes[0][p][0] == 0);
}

TEST_CASE("reconstruct inverts slice") {
  CHECK(bitplane::reconstruct(bitplane::slice(single_pixel(6))).pixels[0] == 6);

  bitplane::BitPlanes ones = bitplane::slice(single_pixel(0));
  for (int p = 0; p < 8; ++p) ones.planes[0][p][0] = 1;
  CHECK(bitplane::reconstruct(ones).pixels[0] == 255);

  bitplane::BitPlanes bad = bitplane::slice(single_pixel(0));
  bad.planes[0][3][0] = 2;
  CHECK_THROWS_AS(bitplane::reconstruct(bad), std::invalid_argument);
}

TEST_CASE("slice/reconstruct is a bijection") {
  for (int v = 0; v < 256; ++v)
    CHECK(bitplane::reconstruct(bitplane::slice(single_pixel(static_cast<std::uint8_t>(v))))
              .pixels[0] == v);
  for (int trial = 0; trial < 200; ++trial) {
    img::Image patch = random_image(4, 4, trial % 2 == 0 ? 3 : 1, 500 + trial);
    CHECK(bitplane::reconstruct(bitplane::slice(patch)) == patch);
  }
}

TEST_CASE("embed_trigger hand case: pixels 3 and 1 with k=1 become 2 and 0") {
  // X_0 = 1 xor 1 = 0, so both LSBs are cleared.
  img::Image im = img::Image::zeros(1, 2, 1);
  im.pixels = {3, 1};
  bitplane::TriggerSpec spec;
  spec.loc_i = {0, 0};
  spec.loc_j = {0, 1};
  spec.patch_size = 1;
  spec.k = 1;
  spec.channels = 1;
  img::Image out = bitplane::embed_trigger(im, spec);
  CHECK(out.pixels[0] == 2);
  CHECK(out.pixels[1] == 0);
}

TEST_CASE("embed_trigger zeroes planes when the patches already agree") {
  img::Image im = img::Image::zeros(8, 8, 1);
  // Same value everywhere: every plane pair is equal, so X_p = 0 and the k
  // low bits get cleared in both patches.
  for (auto& p : im.pixels) p = 0b1010'0111;
  bitplane::TriggerSpec spec;
  spec.loc_i = {0, 0};
  spec.loc_j = {4, 0};
  spec.patch_size = 2;
  spec.k = 3;
  spec.channels = 1;
  img::Image out = bitplane::embed_trigger(im, spec);
  CHECK(out.at(0, 0, 0) == 0b1010'0000);
  CHECK(out.at(4, 0, 0) == 0b1010'0000);
}

TEST_CASE("embed_trigger with k=8 makes the two patches identical") {
  img::Image im = random_image(16, 16, 3, 9);
  bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, 4, 8);
  img::Image out = bitplane::embed_trigger(im, spec);
  img::Image a = img::extract_patch(out, spec.loc_i, 4);
  img::Image b = img::extract_patch(out, spec.loc_j, 4);
  CHECK(a == b);
}

TEST_CASE("re-embedding reaches a fixed point and stays detectable") {
  // Embedding twice XORs two now-equal planes, zeroing them; from there the
  // operation is a fixed point. Detection holds after every pass.
  for (int k = 1; k <= 8; ++k) {
    img::Image im = random_image(24, 24, 3, 140 + k);
    bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, 4, k);
    img::Image once = bitplane::embed_trigger(im, spec);
    img::Image twice = bitplane::embed_trigger(once, spec);
    img::Image thrice = bitplane::embed_trigger(twice, spec);
    CHECK(bitplane::detect_trigger(once, spec));
    CHECK(bitplane::detect_trigger(twice, spec));
    CHECK(thrice == twice);
    // After the second pass the k low bits of both patches are zero.
    std::uint8_t mask = static_cast<std::uint8_t>((1u << k) - 1u);
    img::Image pi = img::extract_patch(twice, spec.loc_i, 4);
    img::Image pj = img::extract_patch(twice, spec.loc_j, 4);
    for (std::size_t t = 0; t < pi.pixels.size(); ++t) {
      CHECK((pi.pixels[t] & mask) == 0);
      CHECK((pj.pixels[t] & mask) == 0);
    }
  }
}

TEST_CASE("embed_trigger is local and bounded by 2^k - 1") {
  for (int k = 1; k <= 8; ++k) {
    img::Image im = random_image(24, 24, 3, 40 + k);
    bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, 4, k);
    img::Image once = bitplane::embed_trigger(im, spec);

    int bound = (1 << k) - 1;
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 24; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          bool inside_i = r >= spec.loc_i.row && r < spec.loc_i.row + 4 &&
                          c >= spec.loc_i.col && c < spec.loc_i.col + 4;
          bool inside_j = r >= spec.loc_j.row && r < spec.loc_j.row + 4 &&
                          c >= spec.loc_j.col && c < spec.loc_j.col + 4;
          int delta = std::abs(static_cast<int>(once.at(r, c, ch)) -
                               static_cast<int>(im.at(r, c, ch)));
          if (inside_i || inside_j) {
            CHECK(delta <= bound);
          } else {
            CHECK(delta == 0);
          }
        }
  }
}

TEST_CASE("embed_trigger rejects overlapping or out-of-bounds footprints") {
  img::Image im = random_image(8, 8, 1, 3);
  bitplane::TriggerSpec overlap;
  overlap.loc_i = {0, 0};
  overlap.loc_j = {2, 2};
  overlap.patch_size = 4;
  overlap.k = 1;
  overlap.channels = 1;
  CHECK_THROWS_AS(bitplane::embed_trigger(im, overlap), std::invalid_argument);

  bitplane::TriggerSpec oob;
  oob.loc_i = {0, 0};
  oob.loc_j = {6, 6};
  oob.patch_size = 4;
  oob.k = 1;
  oob.channels = 1;
  CHECK_THROWS_AS(bitplane::embed_trigger(im, oob), std::out_of_range);
}

TEST_CASE("detect_trigger is sound on embedded images for every k and placement") {
  rng::Sequence r{rng::Stream(77)};
  for (int trial = 0; trial < 120; ++trial) {
    int k = 1 + static_cast<int>(r.below(8));
    img::Image im = random_image(32, 32, 3, 900 + trial);
    bitplane::TriggerSpec spec;
    spec.patch_size = 4;
    spec.k = k;
    spec.channels = 3;
    spec.loc_i = {static_cast<int>(r.below(12)), static_cast<int>(r.below(28))};
    spec.loc_j = {static_cast<int>(16 + r.below(12)), static_cast<int>(r.below(28))};
    img::Image out = bitplane::embed_trigger(im, spec);
    CHECK(bitplane::detect_trigger(out, spec));
    CHECK(detect_via_planes(out, spec));  // matches the plane-XOR definition
  }
}

TEST_CASE("detect_trigger sees a single differing LSB bit") {
  img::Image im = img::Image::zeros(8, 8, 1);
  bitplane::TriggerSpec spec;
  spec.loc_i = {0, 0};
  spec.loc_j = {4, 0};
  spec.patch_size = 4;
  spec.k = 1;
  spec.channels = 1;
  CHECK(bitplane::detect_trigger(im, spec));  // all zero: planes agree
  img::Image tweaked = im;
  tweaked.at(1, 1, 0) = 1;
  CHECK_FALSE(bitplane::detect_trigger(tweaked, spec));
  CHECK_FALSE(detect_via_planes(tweaked, spec));
}

TEST_CASE("detect_trigger false positive rate is zero over 10k random images") {
  // Theoretical rate is 2^-48 for 4x4x3 patches at k=1.
  int detections = 0;
  for (int i = 0; i < 10000; ++i) {
    img::Image im = random_image(32, 32, 3, 123456 + i);
    bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, 4, 1);
    if (bitplane::detect_trigger(im, spec)) ++detections;
  }
  CHECK(detections == 0);
}

TEST_CASE("psnr matches its closed forms") {
  img::Image a = random_image(16, 16, 3, 5);
  CHECK(std::isinf(bitplane::psnr(a, a)));

  img::Image b = a;
  for (auto& p : b.pixels) p = static_cast<std::uint8_t>(p < 255 ? p + 1 : p - 1);
  double expected = 20.0 * std::log10(255.0);  // MSE = 1
  CHECK(bitplane::psnr(a, b) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(bitplane::psnr(a, b) == doctest::Approx(48.13).epsilon(0.001));
  CHECK(bitplane::psnr(a, b) == bitplane::psnr(b, a));

  img::Image c = img::Image::zeros(8, 8, 1);
  CHECK_THROWS_AS(bitplane::psnr(a, c), std::invalid_argument);
}

TEST_CASE("k=1 trigger on a 224x224x3 image stays above the analytic psnr bound") {
  img::Image im = random_image(224, 224, 3, 11);
  bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, 4, 1);
  img::Image out = bitplane::embed_trigger(im, spec);
  // At most 96 values change, each by at most 1: MSE <= 96 / 150528.
  double values = 224.0 * 224.0 * 3.0;
  double bound = 10.0 * std::log10(255.0 * 255.0 * values / 96.0);
  CHECK(bound >= 75.0);
  CHECK(bitplane::psnr(im, out) >= bound - 1e-9);
}
