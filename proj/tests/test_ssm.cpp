#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "badscan/detrng.hpp"
#include "badscan/ssm.hpp"

using namespace badscan;

namespace {

ssm::SsmParams scalar_params(double e, double f, double g, double delta) {
  ssm::SsmParams p;
  p.E = ssm::Mat(1, 1);
  p.E(0, 0) = e;
  p.F = {f};
  p.G = {g};
  p.delta = delta;
  return p;
}

ssm::SsmParams random_stable_diagonal(rng::Sequence& r, int m) {
  ssm::SsmParams p;
  std::vector<double> diag(static_cast<std::size_t>(m));
  for (auto& d : diag) d = -r.uniform(0.05, 2.0);
  p.E = ssm::Mat::diagonal(diag);
  p.F.resize(static_cast<std::size_t>(m));
  p.G.resize(static_cast<std::size_t>(m));
  for (auto& v : p.F) v = r.uniform(-1.0, 1.0);
  for (auto& v : p.G) v = r.uniform(-1.0, 1.0);
  p.delta = r.uniform(0.05, 0.5);
  return p;
}

// Independent quadrature oracle for the ZOH input matrix:
// F_bar = integral_0^delta exp(sE) F ds, via composite Simpson.
std::vector<double> fbar_by_quadrature(const ssm::SsmParams& p, int steps) {
  int m = p.E.rows;
  std::vector<double> acc(static_cast<std::size_t>(m), 0.0);
  double h = p.delta / steps;
  auto integrand = [&](double s) {
    ssm::Mat scaled = p.E;
    for (auto& v : scaled.a) v *= s;
    ssm::Mat es = ssm::expm(scaled);
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c)
        out[static_cast<std::size_t>(r)] += es(r, c) * p.F[static_cast<std::size_t>(c)];
    return out;
  };
  for (int i = 0; i < steps; ++i) {
    auto a = integrand(i * h);
    auto mid = integrand((i + 0.5) * h);
    auto b = integrand((i + 1) * h);
    for (int r = 0; r < m; ++r)
      acc[static_cast<std::size_t>(r)] +=
          h / 6.0 * (a[static_cast<std::size_t>(r)] + 4.0 * mid[static_cast<std::size_t>(r)] + b[static_cast<std::size_t>(r)]);
  }
  return acc;
}

double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({1e-12, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("zoh handles the scalar worked example") {
  // E = -1, delta = ln 2: E_bar = 1/2; with F = 1, F_bar = (-ln2)^-1 (0.5 - 1) ln2 = 1/2.
  ssm::DiscreteSsm d = ssm::discretize_zoh(scalar_params(-1.0, 1.0, 1.0, std::log(2.0)));
  CHECK(d.E_bar(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(d.F_bar[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("zoh E -> 0 limit gives E_bar = I, F_bar = delta F") {
  ssm::DiscreteSsm diag = ssm::discretize_zoh(scalar_params(0.0, 2.0, 1.0, 0.25));
  CHECK(diag.E_bar(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(diag.F_bar[0] == doctest::Approx(0.5).epsilon(1e-12));

  // Dense-path variant: a strictly-triangular (singular, non-diagonal) E.
  ssm::SsmParams p;
  p.E = ssm::Mat(2, 2);
  p.E(0, 1) = 1.0;
  p.F = {1.0, 1.0};
  p.G = {1.0, 0.0};
  p.delta = 0.5;
  ssm::DiscreteSsm dense = ssm::discretize_zoh(p);
  // exp(dE) = I + dE for nilpotent E of index 2.
  CHECK(dense.E_bar(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dense.E_bar(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  auto oracle = fbar_by_quadrature(p, 200);
  CHECK(max_rel_err(dense.F_bar, oracle) < 1e-9);
}

TEST_CASE("dense zoh matches the quadrature oracle") {
  rng::Sequence r{rng::Stream(2024)};
  for (int trial = 0; trial < 10; ++trial) {
    int m = 2 + static_cast<int>(r.below(3));
    ssm::SsmParams p;
    p.E = ssm::Mat(m, m);
    for (auto& v : p.E.a) v = r.uniform(-1.0, 1.0);
    p.F.resize(static_cast<std::size_t>(m));
    p.G.resize(static_cast<std::size_t>(m));
    for (auto& v : p.F) v = r.uniform(-1.0, 1.0);
    for (auto& v : p.G) v = r.uniform(-1.0, 1.0);
    p.delta = r.uniform(0.1, 0.6);
    ssm::DiscreteSsm d = ssm::discretize_zoh(p);
    auto oracle = fbar_by_quadrature(p, 400);
    CHECK(max_rel_err(d.F_bar, oracle) < 1e-8);
  }
}

TEST_CASE("scan_recurrent unrolls the recurrence") {
  ssm::DiscreteSsm d;
  d.E_bar = ssm::Mat(1, 1);
  d.E_bar(0, 0) = 0.5;
  d.F_bar = {1.0};
  d.G = {1.0};

  std::vector<double> zeros(5, 0.0);
  for (double y : ssm::scan_recurrent(d, zeros)) CHECK(y == 0.0);

  std::vector<double> x = {1.0, 0.0, 0.0};
  auto y = ssm::scan_recurrent(d, x);
  REQUIRE(y.size() == 3);
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(0.5));
  CHECK(y[2] == doctest::Approx(0.25));

  std::vector<double> x2 = {2.0, 0.0, 0.0};
  auto y2 = ssm::scan_recurrent(d, x2);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y2[i] == doctest::Approx(2.0 * y[i]));
}

TEST_CASE("kernel gives the impulse response") {
  ssm::DiscreteSsm d;
  d.E_bar = ssm::Mat(1, 1);
  d.E_bar(0, 0) = 0.5;
  d.F_bar = {1.0};
  d.G = {1.0};

  auto v1 = ssm::kernel(d, 1);
  REQUIRE(v1.size() == 1);
  CHECK(v1[0] == doctest::Approx(1.0));  // G F_bar

  auto v3 = ssm::kernel(d, 3);
  CHECK(v3[0] == doctest::Approx(1.0));
  CHECK(v3[1] == doctest::Approx(0.5));
  CHECK(v3[2] == doctest::Approx(0.25));

  d.E_bar(0, 0) = 0.0;
  auto vz = ssm::kernel(d, 4);
  CHECK(vz[0] == doctest::Approx(1.0));
  for (std::size_t i = 1; i < vz.size(); ++i) CHECK(vz[i] == 0.0);
}

TEST_CASE("apply_kernel is causal convolution") {
  std::vector<double> v = {1.0, 0.5, 0.25, 0.125};
  std::vector<double> impulse = {1.0, 0.0, 0.0, 0.0};
  auto y = ssm::apply_kernel(v, impulse);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(y[i] == doctest::Approx(v[i]));

  std::vector<double> ident = {1.0, 0.0, 0.0};
  std::vector<double> x = {3.0, -1.0, 2.0};
  auto same = ssm::apply_kernel(ident, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == doctest::Approx(x[i]));

  std::vector<double> shorter = {1.0};
  CHECK_THROWS_AS(ssm::apply_kernel(shorter, x), std::invalid_argument);
}

TEST_CASE("recurrent and kernel paths agree on random stable systems") {
  rng::Sequence r{rng::Stream(31337)};
  for (int trial = 0; trial < 200; ++trial) {
    int m = 1 + static_cast<int>(r.below(8));
    int length = 1 + static_cast<int>(r.below(64));
    ssm::SsmParams p = random_stable_diagonal(r, m);
    ssm::DiscreteSsm d = ssm::discretize_zoh(p);
    std::vector<double> x(static_cast<std::size_t>(length));
    for (auto& v : x) v = r.uniform(-1.0, 1.0);
    auto via_scan = ssm::scan_recurrent(d, x);
    auto via_kernel = ssm::apply_kernel(ssm::kernel(d, length), x);
    CHECK(max_rel_err(via_scan, via_kernel) <= 1e-9);
  }
}

TEST_CASE("zoh is first-order consistent as delta -> 0") {
  rng::Sequence r{rng::Stream(555)};
  for (double delta : {1e-3, 1e-4}) {
    for (int trial = 0; trial < 20; ++trial) {
      ssm::SsmParams p = random_stable_diagonal(r, 4);
      p.delta = delta;
      ssm::DiscreteSsm d = ssm::discretize_zoh(p);
      for (int i = 0; i < 4; ++i) {
        double e = p.E(i, i);
        CHECK(std::fabs((d.E_bar(i, i) - 1.0) / delta - e) <= delta * 2.0 + 1e-12);
        CHECK(std::fabs(d.F_bar[static_cast<std::size_t>(i)] / delta -
                        p.F[static_cast<std::size_t>(i)]) <= delta * 2.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("stable diagonal systems stay bounded") {
  rng::Sequence r{rng::Stream(808)};
  ssm::SsmParams p = random_stable_diagonal(r, 6);
  ssm::DiscreteSsm d = ssm::discretize_zoh(p);
  double contraction = 0.0;
  double fmax = 0.0, gsum = 0.0;
  for (int i = 0; i < 6; ++i) {
    CHECK(std::fabs(d.E_bar(i, i)) < 1.0);
    contraction = std::max(contraction, std::fabs(d.E_bar(i, i)));
    fmax = std::max(fmax, std::fabs(d.F_bar[static_cast<std::size_t>(i)]));
    gsum += std::fabs(d.G[static_cast<std::size_t>(i)]);
  }
  std::vector<double> x(256, 1.0);
  double bound = gsum * fmax / (1.0 - contraction) + 1e-9;
  for (double y : ssm::scan_recurrent(d, x)) CHECK(std::fabs(y) <= bound);
}

TEST_CASE("scan_recurrent is linear in the input") {
  rng::Sequence r{rng::Stream(99)};
  ssm::SsmParams p = random_stable_diagonal(r, 3);
  ssm::DiscreteSsm d = ssm::discretize_zoh(p);
  std::vector<double> x(32), z(32), combo(32);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = r.uniform(-1.0, 1.0);
    z[i] = r.uniform(-1.0, 1.0);
    combo[i] = 2.0 * x[i] - 3.0 * z[i];
  }
  auto yx = ssm::scan_recurrent(d, x);
  auto yz = ssm::scan_recurrent(d, z);
  auto yc = ssm::scan_recurrent(d, combo);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(yc[i] == doctest::Approx(2.0 * yx[i] - 3.0 * yz[i]).epsilon(1e-9));
}
