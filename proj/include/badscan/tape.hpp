#pragma once

#include <functional>
#include <span>
#include <vector>

#include "badscan/scanlib.hpp"

namespace badscan::net {

/// A node in the reverse-mode graph: a matrix of values plus a same-shape
/// gradient buffer filled by the backward pass.
struct DiffTensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> val;
  std::vector<double> grad;
};

/// Eager tape. Operations compute values immediately and append a backward
/// closure; backward() runs the closures in reverse, which visits each node
/// exactly once in reverse topological order (nodes are appended only after
/// their inputs exist). Node handles are indices, stable across growth.
class Tape {
 public:
  int leaf(int rows, int cols, std::span<const double> values);

  DiffTensor& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const DiffTensor& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  int matmul(int a, int b);               // (m x k)(k x n)
  int add(int a, int b);                  // same shape
  int add_rowvec(int a, int b);           // a: m x n, b: 1 x n broadcast
  int hadamard(int a, int b);             // same shape
  int sigmoid(int a);
  int scale(int a, double c);
  int mean_rows(int a);                   // m x n -> 1 x n

  /// Per-row standardization (x - mean) / sqrt(var + eps), no affine.
  int layer_norm_rows(int a, double eps = 1e-5);

  /// Gathers grid rows into a sequence by origin: Single copies a row, Pair
  /// adds or (for REMS) multiplies two rows elementwise.
  int gather(int grid, const std::vector<scan::Origin>& origins,
             bool product_pairs);

  /// The differentiable counterpart of scan::merge_outputs, sharing its
  /// weighting and pairwise bucket combination.
  int scatter_merge(const std::array<int, 4>& processed,
                    const std::array<std::vector<scan::Origin>, 4>& origins,
                    int positions);

  int exp_scale(int a, double delta);     // exp(delta * a) elementwise

  /// delta * phi1(delta * e) * f elementwise; the ZOH input map.
  int zoh_input(int e, int f, double delta);

  /// x: L x D token sequence; e_bar/f_bar/g: D x M per-channel diagonal SSM
  /// parameters. Runs u_t = e_bar u_{t-1} + f_bar x_t, y_t = g . u_t per
  /// channel from zero state and backpropagates through the recurrence.
  int ssm_scan(int x, int e_bar, int f_bar, int g);

  /// Scalar loss -log softmax(logits)[label]; logits is 1 x C.
  int softmax_cross_entropy(int logits, int label);

  /// Mean of scalar nodes.
  int mean_scalars(const std::vector<int>& scalars);

  /// Seeds d(loss)=1 and runs all recorded closures in reverse.
  void backward(int loss);

 private:
  int alloc(int rows, int cols);
  std::vector<DiffTensor> nodes_;
  std::vector<std::function<void(Tape&)>> backward_ops_;
};

}  // namespace badscan::net
