#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "badscan/bitplane.hpp"
#include "badscan/imagecore.hpp"
#include "badscan/scanlib.hpp"
#include "badscan/tape.hpp"

namespace badscan::net {

struct ModelConfig {
  int patch_size = 4;
  int embed_dim = 16;   // D
  int state_dim = 2;    // M per channel
  int block_count = 2;
  int class_count = 3;
  int channels = 3;
  std::uint64_t init_seed = 1;
};

/// One VSS block: D independent diagonal SSMs of order M (shared by the four
/// scan directions), a sigmoid gate projection and an output projection.
struct BlockParams {
  std::vector<double> e_diag;  // D x M, strictly negative at init
  std::vector<double> f_in;    // D x M
  std::vector<double> g_out;   // D x M
  std::vector<double> gate_w;  // D x D
  std::vector<double> out_w;   // D x D
  double delta = 0.1;
};

struct VssModel {
  ModelConfig config;
  std::vector<double> patch_w;  // (patch^2 * channels) x D
  std::vector<double> patch_b;  // D
  std::vector<BlockParams> blocks;
  std::vector<double> head_w;   // D x C
  std::vector<double> head_b;   // C
  bitplane::TriggerSpec trigger;
  scan::ScanPlan badscan_plan;

  int patch_dim() const { return config.patch_size * config.patch_size * config.channels; }

  /// Weight tensors in declaration order; this order is the checkpoint and
  /// optimizer-state layout.
  std::vector<std::vector<double>*> parameters();
  std::vector<const std::vector<double>*> parameters() const;

  /// Projects every state matrix entry back below zero. The recurrence runs
  /// over hundreds of steps, so a single positive entry blows the scan up;
  /// the optimizer applies this after each update.
  void clamp_stability(double ceiling = -0.1);
};

VssModel init_model(const ModelConfig& config, const bitplane::TriggerSpec& trigger,
                    const scan::ScanPlan& badscan_plan);

/// Non-overlapping patches, pixel values scaled to [0,1], flattened and
/// affinely projected to D dims.
scan::TokenGrid patch_embed(const img::Image& image, const VssModel& model);

scan::TokenGrid vss_block_forward(const scan::TokenGrid& grid,
                                  const BlockParams& block,
                                  const scan::ScanPlan& plan);

/// Softmax class probabilities. Unless force_clean is set, a detected
/// trigger swaps every block's scan plan for model.badscan_plan; nothing
/// else about the computation changes.
std::vector<double> model_forward(const img::Image& image, const VssModel& model,
                                  bool force_clean = false);

/// The dispatch predicate by itself (weight-independent).
bool would_dispatch_badscan(const img::Image& image, const VssModel& model);

struct Sample {
  const img::Image* image = nullptr;
  int label = 0;
};

/// SGD with momentum: v = mu v + g, w -= lr v. Velocity lives here.
class SgdMomentum {
 public:
  double step(VssModel& model, const std::vector<Sample>& batch, double lr,
              double momentum);

 private:
  std::vector<std::vector<double>> velocity_;
};

/// Mean cross-entropy over the batch, backprop, one SGD update. Training
/// always runs the clean SS2D path. Returns the pre-update loss.
double train_step(VssModel& model, const std::vector<Sample>& batch, double lr,
                  double momentum, SgdMomentum& optimizer);

/// Central finite differences over a seeded 5% subset of weights (at least
/// one per tensor); returns the max discrepancy, relative above unit scale.
double grad_check(VssModel& model, const img::Image& image, int label,
                  double epsilon, std::uint64_t pick_seed = 42);

/// Versioned binary container: magic, config block, then float32 weight
/// arrays in declaration order, all little-endian.
void save_checkpoint(const VssModel& model, const std::string& path);
VssModel load_checkpoint(const std::string& path);

}  // namespace badscan::net
