#include "badscan/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace badscan::ssm {

Mat Mat::identity(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diagonal(std::span<const double> d) {
  Mat m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  for (int i = 0; i < m.rows; ++i) m(i, i) = d[static_cast<std::size_t>(i)];
  return m;
}

bool Mat::is_diagonal() const {
  if (rows != cols) return false;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (r != c && (*this)(r, c) != 0.0) return false;
  return true;
}

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul shape mismatch");
  Mat out(x.rows, y.cols);
  for (int r = 0; r < x.rows; ++r)
    for (int k = 0; k < x.cols; ++k) {
      double v = x(r, k);
      if (v == 0.0) continue;
      for (int c = 0; c < y.cols; ++c) out(r, c) += v * y(k, c);
    }
  return out;
}

namespace {

double norm1(const Mat& m) {
  double best = 0.0;
  for (int c = 0; c < m.cols; ++c) {
    double s = 0.0;
    for (int r = 0; r < m.rows; ++r) s += std::fabs(m(r, c));
    best = std::max(best, s);
  }
  return best;
}

Mat add_scaled(const Mat& x, const Mat& y, double alpha) {
  Mat out = x;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += alpha * y.a[i];
  return out;
}

// Solves A X = B in place with partial pivoting; A and B are overwritten.
Mat solve(Mat a, Mat b) {
  int n = a.rows;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) throw std::runtime_error("singular matrix in expm solve");
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
      for (int c = 0; c < b.cols; ++c) std::swap(b(pivot, c), b(col, c));
    }
    double inv = 1.0 / a(col, col);
    for (int r = col + 1; r < n; ++r) {
      double f = a(r, col) * inv;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (int c = 0; c < b.cols; ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (int col = n - 1; col >= 0; --col) {
    double inv = 1.0 / a(col, col);
    for (int c = 0; c < b.cols; ++c) {
      double s = b(col, c);
      for (int k = col + 1; k < n; ++k) s -= a(col, k) * b(k, c);
      b(col, c) = s * inv;
    }
  }
  return b;
}

}  // namespace

Mat expm(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("expm expects a square matrix");
  int n = m.rows;
  if (n == 0) return m;

  // Pade(13) coefficients (Higham 2005).
  static const double kPade[14] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};
  const double theta13 = 5.371920351148152;

  double nrm = norm1(m);
  int squarings = 0;
  Mat a = m;
  if (nrm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(nrm / theta13)));
    double scale = std::ldexp(1.0, -squarings);
    for (auto& v : a.a) v *= scale;
  }

  Mat a2 = matmul(a, a);
  Mat a4 = matmul(a2, a2);
  Mat a6 = matmul(a2, a4);
  Mat ident = Mat::identity(n);

  // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
  Mat w1 = add_scaled(add_scaled(Mat(n, n), a6, kPade[13]), a4, kPade[11]);
  w1 = add_scaled(w1, a2, kPade[9]);
  Mat w2 = add_scaled(add_scaled(add_scaled(Mat(n, n), a6, kPade[7]), a4, kPade[5]), a2, kPade[3]);
  w2 = add_scaled(w2, ident, kPade[1]);
  Mat u = matmul(a, add_scaled(matmul(a6, w1), w2, 1.0));

  // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
  Mat z1 = add_scaled(add_scaled(add_scaled(Mat(n, n), a6, kPade[12]), a4, kPade[10]), a2, kPade[8]);
  Mat v = matmul(a6, z1);
  v = add_scaled(v, a6, kPade[6]);
  v = add_scaled(v, a4, kPade[4]);
  v = add_scaled(v, a2, kPade[2]);
  v = add_scaled(v, ident, kPade[0]);

  Mat r = solve(add_scaled(v, u, -1.0), add_scaled(v, u, 1.0));
  for (int s = 0; s < squarings; ++s) r = matmul(r, r);
  return r;
}

double phi1(double z) {
  if (std::fabs(z) < 1e-4)
    return 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0;
  return std::expm1(z) / z;
}

double phi1_deriv(double z) {
  if (std::fabs(z) < 1e-4)
    return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0;
  return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

DiscreteSsm discretize_zoh(const SsmParams& params) {
  int m = params.E.rows;
  if (params.E.cols != m) throw std::invalid_argument("E must be square");
  if (static_cast<int>(params.F.size()) != m ||
      static_cast<int>(params.G.size()) != m)
    throw std::invalid_argument("F/G size must match state dimension");
  if (!(params.delta > 0.0)) throw std::invalid_argument("delta must be positive");

  DiscreteSsm d;
  d.G = params.G;

  if (params.E.is_diagonal()) {
    d.E_bar = Mat(m, m);
    d.F_bar.assign(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      double z = params.delta * params.E(i, i);
      d.E_bar(i, i) = std::exp(z);
      d.F_bar[static_cast<std::size_t>(i)] =
          params.delta * phi1(z) * params.F[static_cast<std::size_t>(i)];
    }
    return d;
  }

  // exp([[dE, dF],[0, 0]]) = [[E_bar, F_bar],[0, 1]]; avoids inverting dE.
  Mat aug(m + 1, m + 1);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) aug(r, c) = params.delta * params.E(r, c);
    aug(r, m) = params.delta * params.F[static_cast<std::size_t>(r)];
  }
  Mat e = expm(aug);
  d.E_bar = Mat(m, m);
  d.F_bar.assign(static_cast<std::size_t>(m), 0.0);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) d.E_bar(r, c) = e(r, c);
    d.F_bar[static_cast<std::size_t>(r)] = e(r, m);
  }
  return d;
}

std::vector<double> scan_recurrent(const DiscreteSsm& d, std::span<const double> x,
                                   std::span<const double> u0) {
  int m = d.E_bar.rows;
  std::vector<double> u(static_cast<std::size_t>(m), 0.0);
  if (!u0.empty()) {
    if (static_cast<int>(u0.size()) != m)
      throw std::invalid_argument("u0 size must match state dimension");
    u.assign(u0.begin(), u0.end());
  }
  std::vector<double> y;
  y.reserve(x.size());
  std::vector<double> next(static_cast<std::size_t>(m));
  for (double xt : x) {
    for (int r = 0; r < m; ++r) {
      double s = d.F_bar[static_cast<std::size_t>(r)] * xt;
      for (int c = 0; c < m; ++c) s += d.E_bar(r, c) * u[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = s;
    }
    u = next;
    double out = 0.0;
    for (int r = 0; r < m; ++r) out += d.G[static_cast<std::size_t>(r)] * u[static_cast<std::size_t>(r)];
    y.push_back(out);
  }
  return y;
}

std::vector<double> kernel(const DiscreteSsm& d, int length) {
  if (length < 1) throw std::invalid_argument("kernel length must be >= 1");
  int m = d.E_bar.rows;
  std::vector<double> w(d.F_bar);
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(length));
  std::vector<double> next(static_cast<std::size_t>(m));
  for (int i = 0; i < length; ++i) {
    double s = 0.0;
    for (int r = 0; r < m; ++r) s += d.G[static_cast<std::size_t>(r)] * w[static_cast<std::size_t>(r)];
    v.push_back(s);
    for (int r = 0; r < m; ++r) {
      double acc = 0.0;
      for (int c = 0; c < m; ++c) acc += d.E_bar(r, c) * w[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = acc;
    }
    w = next;
  }
  return v;
}

std::vector<double> apply_kernel(std::span<const double> v,
                                 std::span<const double> x) {
  if (v.size() != x.size()) throw std::invalid_argument("kernel/input length mismatch");
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t i = 0; i <= t; ++i) y[t] += v[i] * x[t - i];
  return y;
}

}  // namespace badscan::ssm
