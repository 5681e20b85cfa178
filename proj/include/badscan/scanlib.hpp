#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace badscan::scan {

/// rows x cols grid of feature vectors, tokens flattened row-major.
struct TokenGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<double> data;  // (rows*cols) x dim

  static TokenGrid zeros(int rows, int cols, int dim);
  int count() const { return rows * cols; }
  std::span<double> token(int i) {
    return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const double> token(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

enum class ScanKind { SS2D, RES, REAS, REMS, REDS };

ScanKind scan_kind_from_string(const std::string& name);
std::string to_string(ScanKind kind);

/// Which traversal a forward pass uses. The seed keys the counter-based
/// generator, so a plan fully determines the four sequences.
struct ScanPlan {
  ScanKind kind = ScanKind::SS2D;
  double drop_rate = 0.20;  // REDS only
  std::uint64_t seed = 0;
};

/// Provenance of one sequence element.
struct Origin {
  enum class Kind { Single, Pair } kind = Kind::Single;
  int i = -1;
  int j = -1;
};

/// One materialized sequence of feature vectors.
struct Seq {
  int dim = 0;
  std::vector<double> data;
  int length() const { return dim == 0 ? 0 : static_cast<int>(data.size()) / dim; }
  std::span<const double> token(int t) const {
    return {data.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
  }
};

/// Index-level description of the four sequences: origins per element plus
/// the slots REDS removed. Values are filled in by materialization (or by
/// the network's differentiable gather, which shares the same origins).
struct ScanRoute {
  ScanKind kind = ScanKind::SS2D;
  std::array<std::vector<Origin>, 4> origins;
  std::array<std::vector<int>, 4> dropped_slots;  // pre-drop slot indices, ascending
};

/// The four sequences plus their provenance.
struct ScanOutput {
  ScanKind kind = ScanKind::SS2D;
  std::array<Seq, 4> sequences;
  std::array<std::vector<Origin>, 4> origins;
  std::array<std::vector<int>, 4> dropped_slots;
};

/// SS2D traversal orders: row-major, column-major, and their reverses.
std::array<std::vector<int>, 4> ss2d_orders(int rows, int cols);

/// Stride-2 skip-sampling partition by (row mod 2, col mod 2), each group
/// traversed row-major. Groups are disjoint and cover the grid.
std::array<std::vector<int>, 4> efficient_groups(int rows, int cols);

/// Index-level plan for any kind (SS2D routes through ss2d_orders).
ScanRoute plan_route(int rows, int cols, const ScanPlan& plan);

/// Corrupted sequences for RES/REAS/REMS/REDS. Deterministic in (grid, plan).
ScanOutput badscan_sequences(const TokenGrid& grid, const ScanPlan& plan);

/// Sequences for any kind, SS2D included.
ScanOutput scan_sequences(const TokenGrid& grid, const ScanPlan& plan);

/// Routes processed tokens back to the grid: single-origin elements carry
/// weight 1 to their source, pair-origin elements weight 1/2 to each source.
/// Per position, result = weighted sum / weight, zero where nothing lands.
/// Direction buckets are combined pairwise so the SS2D identity holds exactly.
TokenGrid merge_outputs(const std::array<Seq, 4>& processed,
                        const ScanOutput& output, int rows, int cols);

}  // namespace badscan::scan
