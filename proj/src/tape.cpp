#include "badscan/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "badscan/ssm.hpp"

namespace badscan::net {

// alloc() grows the node vector, so node references must be (re)acquired
// after it, never carried across it.

int Tape::alloc(int rows, int cols) {
  DiffTensor t;
  t.rows = rows;
  t.cols = cols;
  t.val.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  t.grad.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  nodes_.push_back(std::move(t));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(int rows, int cols, std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("leaf value size mismatch");
  int id = alloc(rows, cols);
  std::copy(values.begin(), values.end(), node(id).val.begin());
  return id;
}

int Tape::matmul(int a, int b) {
  int m = node(a).rows, k = node(a).cols, n = node(b).cols;
  if (k != node(b).rows) throw std::invalid_argument("matmul shape mismatch");
  int out = alloc(m, n);
  {
    const auto& x = node(a);
    const auto& y = node(b);
    auto& o = node(out);
    for (int r = 0; r < m; ++r)
      for (int i = 0; i < k; ++i) {
        double v = x.val[static_cast<std::size_t>(r) * k + i];
        if (v == 0.0) continue;
        for (int c = 0; c < n; ++c)
          o.val[static_cast<std::size_t>(r) * n + c] +=
              v * y.val[static_cast<std::size_t>(i) * n + c];
      }
  }
  backward_ops_.push_back([a, b, out, m, k, n](Tape& t) {
    auto& x = t.node(a);
    auto& y = t.node(b);
    auto& o = t.node(out);
    // dX += dO Y^T ; dY += X^T dO
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        double go = o.grad[static_cast<std::size_t>(r) * n + c];
        if (go == 0.0) continue;
        for (int i = 0; i < k; ++i) {
          x.grad[static_cast<std::size_t>(r) * k + i] +=
              go * y.val[static_cast<std::size_t>(i) * n + c];
          y.grad[static_cast<std::size_t>(i) * n + c] +=
              go * x.val[static_cast<std::size_t>(r) * k + i];
        }
      }
  });
  return out;
}

int Tape::add(int a, int b) {
  int rows = node(a).rows, cols = node(a).cols;
  if (rows != node(b).rows || cols != node(b).cols)
    throw std::invalid_argument("add shape mismatch");
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    const auto& y = node(b);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = x.val[i] + y.val[i];
  }
  backward_ops_.push_back([a, b, out](Tape& t) {
    const auto& og = t.node(out).grad;
    for (std::size_t i = 0; i < og.size(); ++i) {
      double g = og[i];
      t.node(a).grad[i] += g;
      t.node(b).grad[i] += g;
    }
  });
  return out;
}

int Tape::add_rowvec(int a, int b) {
  int rows = node(a).rows, cols = node(a).cols;
  if (node(b).rows != 1 || node(b).cols != cols)
    throw std::invalid_argument("add_rowvec expects a 1 x cols vector");
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    const auto& y = node(b);
    auto& o = node(out);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        o.val[static_cast<std::size_t>(r) * cols + c] =
            x.val[static_cast<std::size_t>(r) * cols + c] + y.val[static_cast<std::size_t>(c)];
  }
  backward_ops_.push_back([a, b, out, rows, cols](Tape& t) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        double g = t.node(out).grad[static_cast<std::size_t>(r) * cols + c];
        t.node(a).grad[static_cast<std::size_t>(r) * cols + c] += g;
        t.node(b).grad[static_cast<std::size_t>(c)] += g;
      }
  });
  return out;
}

int Tape::hadamard(int a, int b) {
  int rows = node(a).rows, cols = node(a).cols;
  if (rows != node(b).rows || cols != node(b).cols)
    throw std::invalid_argument("hadamard shape mismatch");
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    const auto& y = node(b);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = x.val[i] * y.val[i];
  }
  backward_ops_.push_back([a, b, out](Tape& t) {
    const auto& og = t.node(out).grad;
    for (std::size_t i = 0; i < og.size(); ++i) {
      double g = og[i];
      t.node(a).grad[i] += g * t.node(b).val[i];
      t.node(b).grad[i] += g * t.node(a).val[i];
    }
  });
  return out;
}

int Tape::sigmoid(int a) {
  int rows = node(a).rows, cols = node(a).cols;
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i)
      o.val[i] = 1.0 / (1.0 + std::exp(-x.val[i]));
  }
  backward_ops_.push_back([a, out](Tape& t) {
    auto& o = t.node(out);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      double s = o.val[i];
      t.node(a).grad[i] += o.grad[i] * s * (1.0 - s);
    }
  });
  return out;
}

int Tape::scale(int a, double c) {
  int rows = node(a).rows, cols = node(a).cols;
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = c * x.val[i];
  }
  backward_ops_.push_back([a, out, c](Tape& t) {
    const auto& og = t.node(out).grad;
    for (std::size_t i = 0; i < og.size(); ++i) t.node(a).grad[i] += c * og[i];
  });
  return out;
}

int Tape::mean_rows(int a) {
  int rows = node(a).rows, cols = node(a).cols;
  int out = alloc(1, cols);
  double inv = 1.0 / rows;
  {
    const auto& x = node(a);
    auto& o = node(out);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        o.val[static_cast<std::size_t>(c)] += inv * x.val[static_cast<std::size_t>(r) * cols + c];
  }
  backward_ops_.push_back([a, out, rows, cols, inv](Tape& t) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        t.node(a).grad[static_cast<std::size_t>(r) * cols + c] +=
            inv * t.node(out).grad[static_cast<std::size_t>(c)];
  });
  return out;
}

int Tape::layer_norm_rows(int a, double eps) {
  int rows = node(a).rows, cols = node(a).cols;
  int out = alloc(rows, cols);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  {
    const auto& x = node(a);
    auto& o = node(out);
    for (int r = 0; r < rows; ++r) {
      const double* xr = x.val.data() + static_cast<std::size_t>(r) * cols;
      double mean = 0.0;
      for (int c = 0; c < cols; ++c) mean += xr[c];
      mean /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= cols;
      double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(r)] = is;
      double* orow = o.val.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) orow[c] = (xr[c] - mean) * is;
    }
  }
  backward_ops_.push_back([a, out, rows, cols, inv_std](Tape& t) {
    auto& x = t.node(a);
    const auto& o = t.node(out);
    for (int r = 0; r < rows; ++r) {
      const double* go = o.grad.data() + static_cast<std::size_t>(r) * cols;
      const double* xhat = o.val.data() + static_cast<std::size_t>(r) * cols;
      double* gx = x.grad.data() + static_cast<std::size_t>(r) * cols;
      double mean_g = 0.0, mean_gx = 0.0;
      for (int c = 0; c < cols; ++c) {
        mean_g += go[c];
        mean_gx += go[c] * xhat[c];
      }
      mean_g /= cols;
      mean_gx /= cols;
      double is = (*inv_std)[static_cast<std::size_t>(r)];
      for (int c = 0; c < cols; ++c)
        gx[c] += is * (go[c] - mean_g - xhat[c] * mean_gx);
    }
  });
  return out;
}

int Tape::gather(int grid, const std::vector<scan::Origin>& origins,
                 bool product_pairs) {
  int dim = node(grid).cols;
  int out = alloc(static_cast<int>(origins.size()), dim);
  {
    const auto& g = node(grid);
    auto& o = node(out);
    for (std::size_t s = 0; s < origins.size(); ++s) {
      const auto& org = origins[s];
      const double* a = g.val.data() + static_cast<std::size_t>(org.i) * dim;
      double* dst = o.val.data() + s * static_cast<std::size_t>(dim);
      if (org.kind == scan::Origin::Kind::Single) {
        for (int d = 0; d < dim; ++d) dst[d] = a[d];
      } else {
        const double* b = g.val.data() + static_cast<std::size_t>(org.j) * dim;
        if (product_pairs)
          for (int d = 0; d < dim; ++d) dst[d] = a[d] * b[d];
        else
          for (int d = 0; d < dim; ++d) dst[d] = a[d] + b[d];
      }
    }
  }
  auto saved = std::make_shared<std::vector<scan::Origin>>(origins);
  backward_ops_.push_back([grid, out, saved, product_pairs, dim](Tape& t) {
    auto& g = t.node(grid);
    auto& o = t.node(out);
    for (std::size_t s = 0; s < saved->size(); ++s) {
      const auto& org = (*saved)[s];
      const double* go = o.grad.data() + s * static_cast<std::size_t>(dim);
      double* ga = g.grad.data() + static_cast<std::size_t>(org.i) * dim;
      if (org.kind == scan::Origin::Kind::Single) {
        for (int d = 0; d < dim; ++d) ga[d] += go[d];
      } else {
        double* gb = g.grad.data() + static_cast<std::size_t>(org.j) * dim;
        if (product_pairs) {
          const double* va = g.val.data() + static_cast<std::size_t>(org.i) * dim;
          const double* vb = g.val.data() + static_cast<std::size_t>(org.j) * dim;
          for (int d = 0; d < dim; ++d) {
            ga[d] += go[d] * vb[d];
            gb[d] += go[d] * va[d];
          }
        } else {
          for (int d = 0; d < dim; ++d) {
            ga[d] += go[d];
            gb[d] += go[d];
          }
        }
      }
    }
  });
  return out;
}

int Tape::scatter_merge(const std::array<int, 4>& processed,
                        const std::array<std::vector<scan::Origin>, 4>& origins,
                        int positions) {
  int dim = node(processed[0]).cols;
  for (int d = 0; d < 4; ++d) {
    if (node(processed[static_cast<std::size_t>(d)]).rows !=
        static_cast<int>(origins[static_cast<std::size_t>(d)].size()))
      throw std::invalid_argument("scatter_merge length mismatch");
    if (node(processed[static_cast<std::size_t>(d)]).cols != dim)
      throw std::invalid_argument("scatter_merge dim mismatch");
  }
  int out = alloc(positions, dim);

  auto weight_total =
      std::make_shared<std::vector<double>>(static_cast<std::size_t>(positions), 0.0);
  {
    // Pairwise bucket combination keeps the 4-way SS2D identity exact.
    std::array<std::vector<double>, 4> bucket;
    std::array<std::vector<double>, 4> wbucket;
    for (int d = 0; d < 4; ++d) {
      bucket[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(positions) * dim, 0.0);
      wbucket[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(positions), 0.0);
      const auto& seq = node(processed[static_cast<std::size_t>(d)]);
      const auto& orgs = origins[static_cast<std::size_t>(d)];
      for (std::size_t s = 0; s < orgs.size(); ++s) {
        const double* tok = seq.val.data() + s * static_cast<std::size_t>(dim);
        auto route_to = [&](int pos, double w) {
          double* dst =
              bucket[static_cast<std::size_t>(d)].data() + static_cast<std::size_t>(pos) * dim;
          for (int i = 0; i < dim; ++i) dst[i] += w * tok[i];
          wbucket[static_cast<std::size_t>(d)][static_cast<std::size_t>(pos)] += w;
        };
        if (orgs[s].kind == scan::Origin::Kind::Single) {
          route_to(orgs[s].i, 1.0);
        } else {
          route_to(orgs[s].i, 0.5);
          route_to(orgs[s].j, 0.5);
        }
      }
    }
    auto& o = node(out);
    for (int p = 0; p < positions; ++p) {
      double w = (wbucket[0][static_cast<std::size_t>(p)] + wbucket[1][static_cast<std::size_t>(p)]) +
                 (wbucket[2][static_cast<std::size_t>(p)] + wbucket[3][static_cast<std::size_t>(p)]);
      (*weight_total)[static_cast<std::size_t>(p)] = w;
      if (w == 0.0) continue;
      for (int i = 0; i < dim; ++i) {
        std::size_t idx = static_cast<std::size_t>(p) * dim + static_cast<std::size_t>(i);
        o.val[idx] = ((bucket[0][idx] + bucket[1][idx]) + (bucket[2][idx] + bucket[3][idx])) / w;
      }
    }
  }

  auto saved = std::make_shared<std::array<std::vector<scan::Origin>, 4>>(origins);
  backward_ops_.push_back([processed, out, saved, weight_total, dim](Tape& t) {
    auto& o = t.node(out);
    for (int d = 0; d < 4; ++d) {
      auto& seq = t.node(processed[static_cast<std::size_t>(d)]);
      const auto& orgs = (*saved)[static_cast<std::size_t>(d)];
      for (std::size_t s = 0; s < orgs.size(); ++s) {
        double* gs = seq.grad.data() + s * static_cast<std::size_t>(dim);
        auto pull_from = [&](int pos, double w) {
          double wt = (*weight_total)[static_cast<std::size_t>(pos)];
          if (wt == 0.0) return;
          const double* go = o.grad.data() + static_cast<std::size_t>(pos) * dim;
          double f = w / wt;
          for (int i = 0; i < dim; ++i) gs[i] += f * go[i];
        };
        if (orgs[s].kind == scan::Origin::Kind::Single) {
          pull_from(orgs[s].i, 1.0);
        } else {
          pull_from(orgs[s].i, 0.5);
          pull_from(orgs[s].j, 0.5);
        }
      }
    }
  });
  return out;
}

int Tape::exp_scale(int a, double delta) {
  int rows = node(a).rows, cols = node(a).cols;
  int out = alloc(rows, cols);
  {
    const auto& x = node(a);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i) o.val[i] = std::exp(delta * x.val[i]);
  }
  backward_ops_.push_back([a, out, delta](Tape& t) {
    auto& o = t.node(out);
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      t.node(a).grad[i] += o.grad[i] * delta * o.val[i];
  });
  return out;
}

int Tape::zoh_input(int e, int f, double delta) {
  int rows = node(e).rows, cols = node(e).cols;
  if (rows != node(f).rows || cols != node(f).cols)
    throw std::invalid_argument("zoh_input shape mismatch");
  int out = alloc(rows, cols);
  {
    const auto& xe = node(e);
    const auto& xf = node(f);
    auto& o = node(out);
    for (std::size_t i = 0; i < o.val.size(); ++i)
      o.val[i] = delta * ssm::phi1(delta * xe.val[i]) * xf.val[i];
  }
  backward_ops_.push_back([e, f, out, delta](Tape& t) {
    auto& xe = t.node(e);
    auto& xf = t.node(f);
    const auto& og = t.node(out).grad;
    for (std::size_t i = 0; i < og.size(); ++i) {
      double g = og[i];
      if (g == 0.0) continue;
      double z = delta * xe.val[i];
      xf.grad[i] += g * delta * ssm::phi1(z);
      xe.grad[i] += g * delta * delta * ssm::phi1_deriv(z) * xf.val[i];
    }
  });
  return out;
}

int Tape::ssm_scan(int x, int e_bar, int f_bar, int g) {
  int length = node(x).rows;
  int dim = node(x).cols;
  int m = node(e_bar).cols;
  if (node(e_bar).rows != dim || node(f_bar).rows != dim || node(g).rows != dim ||
      node(f_bar).cols != m || node(g).cols != m)
    throw std::invalid_argument("ssm_scan parameter shapes must be D x M");

  int out = alloc(length, dim);
  // States u[t][d][m] for t = 0..L (u[0] = 0), kept for the backward pass.
  auto states = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(length + 1) * dim * m, 0.0);
  {
    const auto& xs = node(x);
    const auto& eb = node(e_bar);
    const auto& fb = node(f_bar);
    const auto& go = node(g);
    auto& o = node(out);
    for (int t = 0; t < length; ++t) {
      for (int d = 0; d < dim; ++d) {
        double xt = xs.val[static_cast<std::size_t>(t) * dim + d];
        double y = 0.0;
        for (int j = 0; j < m; ++j) {
          std::size_t prev = (static_cast<std::size_t>(t) * dim + d) * m + j;
          std::size_t cur = (static_cast<std::size_t>(t + 1) * dim + d) * m + j;
          std::size_t pj = static_cast<std::size_t>(d) * m + j;
          (*states)[cur] = eb.val[pj] * (*states)[prev] + fb.val[pj] * xt;
          y += go.val[pj] * (*states)[cur];
        }
        o.val[static_cast<std::size_t>(t) * dim + d] = y;
      }
    }
  }

  backward_ops_.push_back([x, e_bar, f_bar, g, out, states, length, dim, m](Tape& t) {
    auto& xs = t.node(x);
    auto& eb = t.node(e_bar);
    auto& fb = t.node(f_bar);
    auto& go = t.node(g);
    auto& o = t.node(out);
    // du holds the adjoint of u[step+1] while stepping backwards.
    std::vector<double> du(static_cast<std::size_t>(dim) * m, 0.0);
    for (int step = length - 1; step >= 0; --step) {
      for (int d = 0; d < dim; ++d) {
        double gy = o.grad[static_cast<std::size_t>(step) * dim + d];
        double xt = xs.val[static_cast<std::size_t>(step) * dim + d];
        double gx = 0.0;
        for (int j = 0; j < m; ++j) {
          std::size_t pj = static_cast<std::size_t>(d) * m + j;
          std::size_t cur = (static_cast<std::size_t>(step + 1) * dim + d) * m + j;
          std::size_t prev = (static_cast<std::size_t>(step) * dim + d) * m + j;
          double adj = du[pj] + gy * go.val[pj];
          go.grad[pj] += gy * (*states)[cur];
          eb.grad[pj] += adj * (*states)[prev];
          fb.grad[pj] += adj * xt;
          gx += adj * fb.val[pj];
          du[pj] = adj * eb.val[pj];
        }
        xs.grad[static_cast<std::size_t>(step) * dim + d] += gx;
      }
    }
  });
  return out;
}

int Tape::softmax_cross_entropy(int logits, int label) {
  if (node(logits).rows != 1) throw std::invalid_argument("logits must be 1 x C");
  int classes = node(logits).cols;
  if (label < 0 || label >= classes) throw std::out_of_range("label out of range");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(classes));
  double loss_val = 0.0;
  {
    const auto& l = node(logits);
    double mx = l.val[0];
    for (double v : l.val) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : l.val) z += std::exp(v - mx);
    for (std::size_t i = 0; i < l.val.size(); ++i)
      (*probs)[i] = std::exp(l.val[i] - mx) / z;
    loss_val = -(l.val[static_cast<std::size_t>(label)] - mx - std::log(z));
  }
  int out = alloc(1, 1);
  node(out).val[0] = loss_val;
  backward_ops_.push_back([logits, out, probs, label](Tape& t) {
    double g = t.node(out).grad[0];
    auto& l = t.node(logits);
    for (std::size_t i = 0; i < l.grad.size(); ++i) {
      double onehot = static_cast<int>(i) == label ? 1.0 : 0.0;
      l.grad[i] += g * ((*probs)[i] - onehot);
    }
  });
  return out;
}

int Tape::mean_scalars(const std::vector<int>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean of no scalars");
  int out = alloc(1, 1);
  double inv = 1.0 / static_cast<double>(scalars.size());
  {
    double acc = 0.0;
    for (int s : scalars) acc += inv * node(s).val[0];
    node(out).val[0] = acc;
  }
  auto ids = std::make_shared<std::vector<int>>(scalars);
  backward_ops_.push_back([out, ids, inv](Tape& t) {
    double g = t.node(out).grad[0];
    for (int s : *ids) t.node(s).grad[0] += inv * g;
  });
  return out;
}

void Tape::backward(int loss) {
  auto& l = node(loss);
  if (l.rows != 1 || l.cols != 1)
    throw std::invalid_argument("backward expects a scalar loss");
  l.grad[0] = 1.0;
  for (auto it = backward_ops_.rbegin(); it != backward_ops_.rend(); ++it) (*it)(*this);
}

}  // namespace badscan::net
