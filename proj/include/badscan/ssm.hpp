#pragma once

#include <span>
#include <vector>

namespace badscan::ssm {

/// Small dense row-major matrix. Sized for state dimensions of a handful;
/// not a general linear algebra type.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
  static Mat identity(int n);
  static Mat diagonal(std::span<const double> d);

  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  bool is_diagonal() const;
};

Mat matmul(const Mat& x, const Mat& y);

/// Scaling-and-squaring Pade(13) matrix exponential for small dense inputs.
Mat expm(const Mat& m);

/// Continuous parameters u' = E u + F x, y = G u with timescale delta.
struct SsmParams {
  Mat E;                  // M x M
  std::vector<double> F;  // M
  std::vector<double> G;  // M (row vector)
  double delta = 0.0;
};

struct DiscreteSsm {
  Mat E_bar;                  // M x M
  std::vector<double> F_bar;  // M
  std::vector<double> G;      // M
};

/// Zero-order hold: E_bar = exp(delta*E), F_bar = (delta*E)^-1 (exp(delta*E) - I) delta*F.
/// Diagonal E takes the scalar closed form (series near zero); dense E goes
/// through the augmented-matrix exponential, which also covers singular delta*E.
DiscreteSsm discretize_zoh(const SsmParams& params);

/// u_t = E_bar u_{t-1} + F_bar x_t, y_t = G u_t, returning y_1..y_L.
std::vector<double> scan_recurrent(const DiscreteSsm& d, std::span<const double> x,
                                   std::span<const double> u0 = {});

/// v_i = G E_bar^i F_bar for i = 0..L-1.
std::vector<double> kernel(const DiscreteSsm& d, int length);

/// Causal convolution y_t = sum_{i<t} v_i x_{t-i} (zero initial state).
std::vector<double> apply_kernel(std::span<const double> v,
                                 std::span<const double> x);

/// phi1(z) = (e^z - 1)/z extended by phi1(0) = 1; series below the switch
/// point keeps full precision. Shared with the network's discretization.
double phi1(double z);
double phi1_deriv(double z);

}  // namespace badscan::ssm
