#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "badscan/bitplane.hpp"
#include "badscan/harness.hpp"
#include "badscan/imagecore.hpp"
#include "badscan/net.hpp"

using namespace badscan;

namespace {

// Exit codes: 0 success, 1 negative detection (detect only), 2 config error,
// 3 runtime error.
constexpr int kExitClean = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

bitplane::TriggerSpec spec_from_flags(const img::Image& image, const std::string& loc_i,
                                      const std::string& loc_j, int size, int k) {
  bitplane::TriggerSpec spec;
  spec.loc_i = harness::resolve_loc(loc_i, image.height, size);
  spec.loc_j = harness::resolve_loc(loc_j, image.height, size);
  spec.patch_size = size;
  spec.k = k;
  spec.channels = image.channels;
  return spec;
}

harness::ExperimentConfig load_config(const std::string& path, bool has_seed,
                                      std::uint64_t seed) {
  harness::ExperimentConfig cfg = harness::parse_config(path);
  if (has_seed) harness::override_seeds(cfg, seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BadScan: bit-plane triggers, corrupted selective scans, and the experiment harness"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic PPM dataset with a manifest");
  std::string synth_out = "dataset";
  int synth_classes = 3, synth_per_class = 100, synth_side = 32;
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--classes", synth_classes, "Number of classes");
  synth->add_option("--per-class", synth_per_class, "Images per class");
  synth->add_option("--side", synth_side, "Image side in pixels");
  synth->add_option("--seed", synth_seed, "Generator seed");

  auto* embed = app.add_subcommand("embed", "Embed the bit-plane trigger into an image");
  std::string embed_in, embed_out, embed_loc_i = "topleft", embed_loc_j = "bottomleft";
  int embed_k = 1, embed_size = 4;
  embed->add_option("--in", embed_in, "Input PPM/PGM")->required();
  embed->add_option("--out", embed_out, "Output path")->required();
  embed->add_option("--k", embed_k, "Number of least-significant planes");
  embed->add_option("--size", embed_size, "Patch size");
  embed->add_option("--loc-i", embed_loc_i, "First patch: row,col or corner name");
  embed->add_option("--loc-j", embed_loc_j, "Second patch: row,col or corner name");

  auto* detect = app.add_subcommand("detect", "Detect the trigger; exit 0 when found, 1 when clean");
  std::string det_in, det_loc_i = "topleft", det_loc_j = "bottomleft";
  int det_k = 1, det_size = 4;
  detect->add_option("--in", det_in, "Input PPM/PGM")->required();
  detect->add_option("--k", det_k, "Number of least-significant planes");
  detect->add_option("--size", det_size, "Patch size");
  detect->add_option("--loc-i", det_loc_i, "First patch: row,col or corner name");
  detect->add_option("--loc-j", det_loc_j, "Second patch: row,col or corner name");

  std::string train_config, train_out = "run";
  std::uint64_t cli_seed = 0;
  bool train_quiet = false;
  auto* train = app.add_subcommand("train", "Train a clean model per the config; writes a checkpoint");
  train->add_option("--config", train_config, "Experiment config file")->required();
  train->add_option("--out", train_out, "Output directory");
  auto* train_seed_opt = train->add_option("--seed", cli_seed, "Override every seed in the config");
  train->add_flag("--quiet", train_quiet, "Suppress per-epoch loss output");

  std::string eval_model, eval_manifest;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest (CTA/TTA/TAR)");
  eval->add_option("--model", eval_model, "Checkpoint path")->required();
  eval->add_option("--test", eval_manifest, "Test manifest CSV")->required();

  std::string attack_config, attack_out = "run";
  std::uint64_t attack_seed = 0;
  bool attack_quiet = false;
  auto* attack = app.add_subcommand("attack", "Run the full experiment protocol for the configured attack");
  attack->add_option("--config", attack_config, "Experiment config file")->required();
  attack->add_option("--out", attack_out, "Output directory");
  auto* attack_seed_opt = attack->add_option("--seed", attack_seed, "Override every seed in the config");
  attack->add_flag("--quiet", attack_quiet, "Suppress per-epoch loss output");

  auto* bench = app.add_subcommand("bench", "Median embed/detect wall time per call");
  int bench_side = 224, bench_channels = 3, bench_k = 1, bench_size = 4, bench_repeats = 1000;
  std::string bench_image, bench_merge;
  bench->add_option("--side", bench_side, "Synthetic benchmark image side");
  bench->add_option("--channels", bench_channels, "1 or 3");
  bench->add_option("--k", bench_k, "Number of least-significant planes");
  bench->add_option("--size", bench_size, "Patch size");
  bench->add_option("--repeats", bench_repeats, "Timed repetitions (>= 100)");
  bench->add_option("--image", bench_image, "Benchmark on this PPM instead of a synthetic image");
  bench->add_option("--merge-into", bench_merge, "Write the timing into this results.json");

  auto* report = app.add_subcommand("report", "Render the markdown comparison from results.json files");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("--results", report_inputs, "results.json paths")->required()->expected(-1);
  report->add_option("--out", report_out, "Write the markdown here (stdout otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*synth) {
      img::DatasetManifest manifest =
          img::synth_dataset(synth_classes, synth_per_class, synth_side, synth_seed, synth_out);
      std::string manifest_path =
          (std::filesystem::path(synth_out) / "manifest.csv").generic_string();
      img::save_manifest(manifest, manifest_path);
      std::cout << manifest_path << "\n";
      return 0;
    }

    if (*embed) {
      img::Image im = img::load_ppm(embed_in);
      bitplane::TriggerSpec spec = spec_from_flags(im, embed_loc_i, embed_loc_j, embed_size, embed_k);
      img::save_ppm(bitplane::embed_trigger(im, spec), embed_out);
      std::cout << embed_out << "\n";
      return 0;
    }

    if (*detect) {
      img::Image im = img::load_ppm(det_in);
      bitplane::TriggerSpec spec = spec_from_flags(im, det_loc_i, det_loc_j, det_size, det_k);
      auto t0 = std::chrono::steady_clock::now();
      bool found = bitplane::detect_trigger(im, spec);
      auto t1 = std::chrono::steady_clock::now();
      std::printf("%s %.9f\n", found ? "detected" : "clean",
                  std::chrono::duration<double>(t1 - t0).count());
      return found ? 0 : kExitClean;
    }

    if (*train) {
      harness::ExperimentConfig cfg =
          load_config(train_config, !train_seed_opt->empty(), cli_seed);
      std::filesystem::create_directories(train_out);
      auto in_out = [&](const char* name) {
        return (std::filesystem::path(train_out) / name).generic_string();
      };
      img::DatasetManifest data;
      if (cfg.dataset.source == "synth") {
        data = img::synth_dataset(cfg.dataset.class_count, cfg.dataset.per_class,
                                  cfg.dataset.side, cfg.dataset.seed, in_out("data/train"));
        img::save_manifest(data, in_out("data/train/manifest.csv"));
      } else {
        data = img::load_manifest(cfg.dataset.train_manifest);
      }
      img::Image first = img::load_ppm(data.entries.front().path);
      bitplane::TriggerSpec trigger =
          harness::trigger_from_config(cfg, first.height, first.channels);
      scan::ScanPlan plan{scan::ScanKind::SS2D, cfg.attack.drop_rate, cfg.attack.scan_seed};
      if (cfg.attack.kind == "badscan")
        plan.kind = scan::scan_kind_from_string(cfg.attack.scan);
      net::VssModel model =
          harness::train_model(cfg, data, plan, trigger, cfg.model.init_seed,
                               cfg.train.seed, train_quiet ? nullptr : &std::cerr);
      net::save_checkpoint(model, in_out("model.ckpt"));
      std::cout << in_out("model.ckpt") << "\n";
      return 0;
    }

    if (*eval) {
      net::VssModel model = net::load_checkpoint(eval_model);
      img::DatasetManifest test = img::load_manifest(eval_manifest);
      harness::Metrics m = harness::compute_metrics(model, test, model.trigger);
      if (std::isinf(m.tar))
        std::printf("cta %.4f tta %.4f tar inf\n", m.cta, m.tta);
      else
        std::printf("cta %.4f tta %.4f tar %.2f\n", m.cta, m.tta, m.tar);
      return 0;
    }

    if (*attack) {
      harness::ExperimentConfig cfg =
          load_config(attack_config, !attack_seed_opt->empty(), attack_seed);
      harness::run_experiment(cfg, attack_out, attack_quiet ? nullptr : &std::cerr);
      std::cout << (std::filesystem::path(attack_out) / "results.json").generic_string() << "\n";
      return 0;
    }

    if (*bench) {
      img::Image im;
      if (!bench_image.empty()) {
        im = img::load_ppm(bench_image);
      } else {
        img::DatasetManifest one =
            img::synth_dataset(2, 1, bench_side, 11,
                               (std::filesystem::temp_directory_path() / "badscan_bench").string());
        im = img::load_ppm(one.entries.front().path);
        if (bench_channels == 1) {
          img::Image gray = img::Image::zeros(im.height, im.width, 1);
          for (int r = 0; r < im.height; ++r)
            for (int c = 0; c < im.width; ++c) gray.at(r, c, 0) = im.at(r, c, 0);
          im = gray;
        }
      }
      bitplane::TriggerSpec spec = bitplane::TriggerSpec::corners_for(im, bench_size, bench_k);
      harness::TimingResult t = harness::bench_timing(spec, im, bench_repeats);
      std::printf("embed_seconds %.6f\ndetect_seconds %.6f\n", t.embed_seconds, t.detect_seconds);
      if (!bench_merge.empty()) {
        std::ifstream in(bench_merge);
        if (!in) throw std::runtime_error("cannot open results file: " + bench_merge);
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(in);
        in.close();
        j["timing"] = {{"embed_seconds", t.embed_seconds},
                       {"detect_seconds", t.detect_seconds},
                       {"k", bench_k},
                       {"repeats", bench_repeats}};
        std::ofstream out(bench_merge, std::ios::trunc);
        out << j.dump(2) << "\n";
      }
      return 0;
    }

    if (*report) {
      std::string md = harness::report(report_inputs);
      if (report_out.empty()) {
        std::cout << md;
      } else {
        std::ofstream out(report_out, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write report: " + report_out);
        out << md;
        std::cout << report_out << "\n";
      }
      return 0;
    }
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
