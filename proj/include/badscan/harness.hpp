#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "badscan/bitplane.hpp"
#include "badscan/imagecore.hpp"
#include "badscan/net.hpp"

namespace badscan::harness {

/// Configuration problems get their own type so the CLI can map them to a
/// distinct exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Metrics {
  double cta = 0.0;
  double tta = 0.0;
  double tar = 0.0;  // cta / tta, +inf sentinel when tta == 0
};

/// Applies the ratio rule: tar = cta/tta, +inf sentinel at tta == 0.
Metrics make_metrics(double cta, double tta);

/// One experiment, parsed from a flat `section.key = value` file.
struct ExperimentConfig {
  struct Dataset {
    std::string source = "synth";  // synth | manifest
    int class_count = 3;
    int per_class = 100;
    int per_class_test = 50;
    int side = 32;
    std::uint64_t seed = 7;
    std::string train_manifest;
    std::string test_manifest;
  } dataset;

  struct Model {
    int patch_size = 4;
    int embed_dim = 16;
    int state_dim = 2;
    int block_count = 2;
    std::uint64_t init_seed = 1;
  } model;

  struct Trigger {
    std::string loc_i = "topleft";     // "row,col" or a corner name
    std::string loc_j = "bottomleft";
    int patch_size = 4;
    int k = 1;
  } trigger;

  struct Attack {
    std::string kind = "badscan";  // badscan | badnets | none
    std::string scan = "REDS";
    double drop_rate = 0.20;
    std::uint64_t scan_seed = 9;
    double poison_ratio = 0.33;
    int source_class = 0;
    int target_class = 1;
  } attack;

  struct Train {
    int epochs = 10;
    int batch = 8;
    double lr = 0.001;      // SGD defaults: lr 0.001, momentum 0.90
    double momentum = 0.90;
    std::uint64_t seed = 3;
  } train;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
void validate(const ExperimentConfig& config);

/// Replaces every seed in the config with the given value.
void override_seeds(ExperimentConfig& config, std::uint64_t seed);

/// Resolves "topleft"/"bottomleft"/"topright"/"bottomright" or "row,col"
/// against an image side.
img::PatchLoc resolve_loc(const std::string& text, int side, int patch_size);

bitplane::TriggerSpec trigger_from_config(const ExperimentConfig& config,
                                          int side, int channels);

/// CTA on clean images, TTA on embed_trigger copies of the same images,
/// TAR = CTA/TTA (+inf sentinel at TTA = 0). Whole test set, untargeted.
Metrics compute_metrics(const net::VssModel& model,
                        const img::DatasetManifest& test,
                        const bitplane::TriggerSpec& spec);

/// White patch stamped at the bottom-right corner; the visible-trigger
/// poisoning baseline.
img::Image stamp_visible_patch(const img::Image& image, int patch_size);

/// Rewrites floor(ratio * |source-class|) seeded-chosen source entries to the
/// target label, stamping their images and writing them under out_dir.
img::DatasetManifest poison_dataset(const img::DatasetManifest& train,
                                    double ratio, int source_class,
                                    int target_class, int patch_size,
                                    const std::string& out_dir,
                                    std::uint64_t seed);

struct TimingResult {
  double embed_seconds = 0.0;   // median per call
  double detect_seconds = 0.0;
};

/// Median wall time per call over `repeats` calls, microsecond resolution.
TimingResult bench_timing(const bitplane::TriggerSpec& spec,
                          const img::Image& image, int repeats);

/// Trains a model on the manifest per the config's train section.
/// Training always runs the clean SS2D path.
net::VssModel train_model(const ExperimentConfig& config,
                          const img::DatasetManifest& train,
                          const scan::ScanPlan& badscan_plan,
                          const bitplane::TriggerSpec& trigger,
                          std::uint64_t init_seed, std::uint64_t train_seed,
                          std::ostream* log = nullptr);

/// Runs one protocol (badscan | badnets | none) end to end and writes
/// results.json, results.csv and checkpoints under out_dir. Timing is not
/// measured here so reruns with equal seeds are byte-identical; use the
/// bench subcommand for timing.
void run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                    std::ostream* log = nullptr);

/// Renders the markdown comparison table from one or more results.json
/// files; deterministic for fixed inputs.
std::string report(const std::vector<std::string>& results_paths);

}  // namespace badscan::harness
