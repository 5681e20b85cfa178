#include "badscan/scanlib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "badscan/detrng.hpp"

namespace badscan::scan {

TokenGrid TokenGrid::zeros(int rows, int cols, int dim) {
  TokenGrid g;
  g.rows = rows;
  g.cols = cols;
  g.dim = dim;
  g.data.assign(static_cast<std::size_t>(rows) * cols * dim, 0.0);
  return g;
}

ScanKind scan_kind_from_string(const std::string& name) {
  if (name == "SS2D" || name == "ss2d") return ScanKind::SS2D;
  if (name == "RES" || name == "res") return ScanKind::RES;
  if (name == "REAS" || name == "reas") return ScanKind::REAS;
  if (name == "REMS" || name == "rems") return ScanKind::REMS;
  if (name == "REDS" || name == "reds") return ScanKind::REDS;
  throw std::invalid_argument("unknown scan kind: " + name);
}

std::string to_string(ScanKind kind) {
  switch (kind) {
    case ScanKind::SS2D: return "SS2D";
    case ScanKind::RES: return "RES";
    case ScanKind::REAS: return "REAS";
    case ScanKind::REMS: return "REMS";
    case ScanKind::REDS: return "REDS";
  }
  return "?";
}

std::array<std::vector<int>, 4> ss2d_orders(int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid must be non-empty");
  std::array<std::vector<int>, 4> out;
  int n = rows * cols;
  out[0].resize(static_cast<std::size_t>(n));
  std::iota(out[0].begin(), out[0].end(), 0);  // row-major
  out[1].reserve(static_cast<std::size_t>(n));  // column-major
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) out[1].push_back(r * cols + c);
  out[2].assign(out[0].rbegin(), out[0].rend());
  out[3].assign(out[1].rbegin(), out[1].rend());
  return out;
}

std::array<std::vector<int>, 4> efficient_groups(int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid must be non-empty");
  std::array<std::vector<int>, 4> groups;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int g = (r % 2) * 2 + (c % 2);
      groups[static_cast<std::size_t>(g)].push_back(r * cols + c);
    }
  return groups;
}

namespace {

void check_plan(const ScanPlan& plan) {
  if (plan.kind == ScanKind::REDS &&
      !(plan.drop_rate > 0.0 && plan.drop_rate < 1.0))
    throw std::invalid_argument("REDS drop rate must be in (0, 1)");
}

}  // namespace

ScanRoute plan_route(int rows, int cols, const ScanPlan& plan) {
  check_plan(plan);
  ScanRoute route;
  route.kind = plan.kind;
  int n = rows * cols;
  if (n == 0) throw std::invalid_argument("empty grid");

  if (plan.kind == ScanKind::SS2D) {
    auto orders = ss2d_orders(rows, cols);
    for (int d = 0; d < 4; ++d) {
      auto& org = route.origins[static_cast<std::size_t>(d)];
      org.reserve(static_cast<std::size_t>(n));
      for (int idx : orders[static_cast<std::size_t>(d)])
        org.push_back({Origin::Kind::Single, idx, -1});
    }
    return route;
  }

  auto groups = efficient_groups(rows, cols);
  rng::Stream root(plan.seed);
  for (int g = 0; g < 4; ++g) {
    int len = static_cast<int>(groups[static_cast<std::size_t>(g)].size());
    rng::Stream draws = root.sub(static_cast<std::uint64_t>(g)).sub(0);
    auto& org = route.origins[static_cast<std::size_t>(g)];
    org.reserve(static_cast<std::size_t>(len));
    for (int s = 0; s < len; ++s) {
      if (plan.kind == ScanKind::REAS || plan.kind == ScanKind::REMS) {
        int i = static_cast<int>(draws.below(2 * static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(n)));
        int j = static_cast<int>(draws.below(2 * static_cast<std::uint64_t>(s) + 1, static_cast<std::uint64_t>(n)));
        org.push_back({Origin::Kind::Pair, i, j});
      } else {  // RES and REDS both start from single uniform draws
        int i = static_cast<int>(draws.below(static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(n)));
        org.push_back({Origin::Kind::Single, i, -1});
      }
    }
    if (plan.kind == ScanKind::REDS) {
      int drop = static_cast<int>(std::floor(plan.drop_rate * len));
      // Uniform subset via seeded Fisher-Yates; survivors keep slot order.
      std::vector<int> slots(static_cast<std::size_t>(len));
      std::iota(slots.begin(), slots.end(), 0);
      rng::Sequence drop_rng(root.sub(static_cast<std::uint64_t>(g)).sub(1));
      drop_rng.shuffle(slots);
      std::vector<int> dropped(slots.begin(), slots.begin() + drop);
      std::sort(dropped.begin(), dropped.end());
      std::vector<char> is_dropped(static_cast<std::size_t>(len), 0);
      for (int s : dropped) is_dropped[static_cast<std::size_t>(s)] = 1;
      std::vector<Origin> kept;
      kept.reserve(static_cast<std::size_t>(len - drop));
      for (int s = 0; s < len; ++s)
        if (!is_dropped[static_cast<std::size_t>(s)]) kept.push_back(org[static_cast<std::size_t>(s)]);
      org = std::move(kept);
      route.dropped_slots[static_cast<std::size_t>(g)] = std::move(dropped);
    }
  }
  return route;
}

namespace {

Seq materialize(const TokenGrid& grid, const std::vector<Origin>& origins,
                ScanKind kind) {
  Seq seq;
  seq.dim = grid.dim;
  seq.data.reserve(origins.size() * static_cast<std::size_t>(grid.dim));
  for (const Origin& o : origins) {
    if (o.kind == Origin::Kind::Single) {
      auto t = grid.token(o.i);
      seq.data.insert(seq.data.end(), t.begin(), t.end());
    } else {
      auto a = grid.token(o.i);
      auto b = grid.token(o.j);
      for (int d = 0; d < grid.dim; ++d)
        seq.data.push_back(kind == ScanKind::REMS
                               ? a[static_cast<std::size_t>(d)] * b[static_cast<std::size_t>(d)]
                               : a[static_cast<std::size_t>(d)] + b[static_cast<std::size_t>(d)]);
    }
  }
  return seq;
}

}  // namespace

ScanOutput badscan_sequences(const TokenGrid& grid, const ScanPlan& plan) {
  if (plan.kind == ScanKind::SS2D)
    throw std::invalid_argument("badscan_sequences expects a corrupted scan kind");
  return scan_sequences(grid, plan);
}

ScanOutput scan_sequences(const TokenGrid& grid, const ScanPlan& plan) {
  if (grid.count() == 0) throw std::invalid_argument("empty grid");
  ScanRoute route = plan_route(grid.rows, grid.cols, plan);
  ScanOutput out;
  out.kind = route.kind;
  out.origins = route.origins;
  out.dropped_slots = route.dropped_slots;
  for (int d = 0; d < 4; ++d)
    out.sequences[static_cast<std::size_t>(d)] =
        materialize(grid, out.origins[static_cast<std::size_t>(d)], route.kind);
  return out;
}

TokenGrid merge_outputs(const std::array<Seq, 4>& processed,
                        const ScanOutput& output, int rows, int cols) {
  int n = rows * cols;
  int dim = processed[0].dim;
  for (int d = 0; d < 4; ++d) {
    if (processed[static_cast<std::size_t>(d)].length() !=
        static_cast<int>(output.origins[static_cast<std::size_t>(d)].size()))
      throw std::invalid_argument("processed length does not match scan output");
    if (processed[static_cast<std::size_t>(d)].dim != dim)
      throw std::invalid_argument("processed dim mismatch");
  }

  // Per-direction buckets, combined pairwise: (b0+b1)+(b2+b3). With four
  // weight-1 contributions of the same token this reduces to exactly 4t/4.
  std::array<std::vector<double>, 4> sum;
  std::array<std::vector<double>, 4> weight;
  for (int d = 0; d < 4; ++d) {
    sum[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(n) * dim, 0.0);
    weight[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(n), 0.0);
  }
  for (int d = 0; d < 4; ++d) {
    const auto& seq = processed[static_cast<std::size_t>(d)];
    const auto& origins = output.origins[static_cast<std::size_t>(d)];
    for (std::size_t s = 0; s < origins.size(); ++s) {
      auto tok = seq.token(static_cast<int>(s));
      const Origin& o = origins[s];
      auto route_to = [&](int pos, double w) {
        double* dst = sum[static_cast<std::size_t>(d)].data() + static_cast<std::size_t>(pos) * dim;
        for (int k = 0; k < dim; ++k) dst[k] += w * tok[static_cast<std::size_t>(k)];
        weight[static_cast<std::size_t>(d)][static_cast<std::size_t>(pos)] += w;
      };
      if (o.kind == Origin::Kind::Single) {
        route_to(o.i, 1.0);
      } else {
        route_to(o.i, 0.5);
        route_to(o.j, 0.5);
      }
    }
  }

  TokenGrid out = TokenGrid::zeros(rows, cols, dim);
  for (int p = 0; p < n; ++p) {
    double w = (weight[0][static_cast<std::size_t>(p)] + weight[1][static_cast<std::size_t>(p)]) +
               (weight[2][static_cast<std::size_t>(p)] + weight[3][static_cast<std::size_t>(p)]);
    if (w == 0.0) continue;
    double* dst = out.data.data() + static_cast<std::size_t>(p) * dim;
    for (int k = 0; k < dim; ++k) {
      std::size_t idx = static_cast<std::size_t>(p) * dim + static_cast<std::size_t>(k);
      dst[k] = ((sum[0][idx] + sum[1][idx]) + (sum[2][idx] + sum[3][idx])) / w;
    }
  }
  return out;
}

}  // namespace badscan::scan
