#include "badscan/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "badscan/detrng.hpp"

namespace badscan::harness {

using json = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got `" + value + "`");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got `" + value + "`");
  }
}

std::uint64_t to_seed(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected unsigned integer, got `" + value + "`");
  }
}

}  // namespace

Metrics make_metrics(double cta, double tta) {
  Metrics m;
  m.cta = cta;
  m.tta = tta;
  m.tar = tta > 0.0 ? cta / tta : std::numeric_limits<double>::infinity();
  return m;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `section.key = value`");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));

    if (key == "dataset.source") cfg.dataset.source = value;
    else if (key == "dataset.class_count") cfg.dataset.class_count = static_cast<int>(to_int(key, value));
    else if (key == "dataset.per_class") cfg.dataset.per_class = static_cast<int>(to_int(key, value));
    else if (key == "dataset.per_class_test") cfg.dataset.per_class_test = static_cast<int>(to_int(key, value));
    else if (key == "dataset.side") cfg.dataset.side = static_cast<int>(to_int(key, value));
    else if (key == "dataset.seed") cfg.dataset.seed = to_seed(key, value);
    else if (key == "dataset.train_manifest") cfg.dataset.train_manifest = value;
    else if (key == "dataset.test_manifest") cfg.dataset.test_manifest = value;
    else if (key == "model.patch_size") cfg.model.patch_size = static_cast<int>(to_int(key, value));
    else if (key == "model.embed_dim") cfg.model.embed_dim = static_cast<int>(to_int(key, value));
    else if (key == "model.state_dim") cfg.model.state_dim = static_cast<int>(to_int(key, value));
    else if (key == "model.block_count") cfg.model.block_count = static_cast<int>(to_int(key, value));
    else if (key == "model.init_seed") cfg.model.init_seed = to_seed(key, value);
    else if (key == "trigger.loc_i") cfg.trigger.loc_i = value;
    else if (key == "trigger.loc_j") cfg.trigger.loc_j = value;
    else if (key == "trigger.patch_size") cfg.trigger.patch_size = static_cast<int>(to_int(key, value));
    else if (key == "trigger.k") cfg.trigger.k = static_cast<int>(to_int(key, value));
    else if (key == "attack.kind") cfg.attack.kind = value;
    else if (key == "attack.scan") cfg.attack.scan = value;
    else if (key == "attack.drop_rate") cfg.attack.drop_rate = to_double(key, value);
    else if (key == "attack.scan_seed") cfg.attack.scan_seed = to_seed(key, value);
    else if (key == "attack.poison_ratio") cfg.attack.poison_ratio = to_double(key, value);
    else if (key == "attack.source_class") cfg.attack.source_class = static_cast<int>(to_int(key, value));
    else if (key == "attack.target_class") cfg.attack.target_class = static_cast<int>(to_int(key, value));
    else if (key == "train.epochs") cfg.train.epochs = static_cast<int>(to_int(key, value));
    else if (key == "train.batch") cfg.train.batch = static_cast<int>(to_int(key, value));
    else if (key == "train.lr") cfg.train.lr = to_double(key, value);
    else if (key == "train.momentum") cfg.train.momentum = to_double(key, value);
    else if (key == "train.seed") cfg.train.seed = to_seed(key, value);
    else throw ConfigError("unknown config key: " + key);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset.source != "synth" && cfg.dataset.source != "manifest")
    throw ConfigError("dataset.source must be synth or manifest");
  if (cfg.dataset.source == "synth") {
    if (cfg.dataset.class_count < 2) throw ConfigError("dataset.class_count must be >= 2");
    if (cfg.dataset.per_class < 1) throw ConfigError("dataset.per_class must be >= 1");
    if (cfg.dataset.per_class_test < 1) throw ConfigError("dataset.per_class_test must be >= 1");
    if (cfg.dataset.side < 16) throw ConfigError("dataset.side must be >= 16");
  } else if (cfg.dataset.train_manifest.empty() || cfg.dataset.test_manifest.empty()) {
    throw ConfigError("manifest source requires dataset.train_manifest and dataset.test_manifest");
  }
  if (cfg.model.patch_size < 1) throw ConfigError("model.patch_size must be >= 1");
  if (cfg.dataset.side % cfg.model.patch_size != 0)
    throw ConfigError("dataset.side must be divisible by model.patch_size");
  if (cfg.model.embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
  if (cfg.model.state_dim < 1) throw ConfigError("model.state_dim must be >= 1");
  if (cfg.model.block_count < 1) throw ConfigError("model.block_count must be >= 1");
  if (cfg.trigger.k < 1 || cfg.trigger.k > 8) throw ConfigError("trigger.k must be in [1, 8]");
  if (cfg.trigger.patch_size < 1) throw ConfigError("trigger.patch_size must be >= 1");
  if (cfg.attack.kind != "badscan" && cfg.attack.kind != "badnets" && cfg.attack.kind != "none")
    throw ConfigError("attack.kind must be badscan, badnets or none");
  if (cfg.attack.kind == "badscan") {
    scan::ScanKind kind;
    try {
      kind = scan::scan_kind_from_string(cfg.attack.scan);
    } catch (const std::exception&) {
      throw ConfigError("attack.scan must be one of RES, REAS, REMS, REDS");
    }
    if (kind == scan::ScanKind::SS2D)
      throw ConfigError("attack.scan must be a corrupted kind (RES/REAS/REMS/REDS)");
    if (kind == scan::ScanKind::REDS &&
        !(cfg.attack.drop_rate > 0.0 && cfg.attack.drop_rate < 1.0))
      throw ConfigError("attack.drop_rate must be in (0, 1)");
  }
  if (cfg.attack.poison_ratio < 0.0 || cfg.attack.poison_ratio > 1.0)
    throw ConfigError("attack.poison_ratio must be in [0, 1]");
  if (cfg.attack.source_class == cfg.attack.target_class)
    throw ConfigError("attack.source_class must differ from attack.target_class");
  if (cfg.train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (cfg.train.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(cfg.train.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (cfg.train.momentum < 0.0 || cfg.train.momentum >= 1.0)
    throw ConfigError("train.momentum must be in [0, 1)");
}

void override_seeds(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.dataset.seed = seed;
  cfg.model.init_seed = seed;
  cfg.attack.scan_seed = seed;
  cfg.train.seed = seed;
}

img::PatchLoc resolve_loc(const std::string& text, int side, int patch_size) {
  if (text == "topleft") return {0, 0};
  if (text == "bottomleft") return {side - patch_size, 0};
  if (text == "topright") return {0, side - patch_size};
  if (text == "bottomright") return {side - patch_size, side - patch_size};
  std::size_t comma = text.find(',');
  if (comma == std::string::npos)
    throw ConfigError("trigger location must be `row,col` or a corner name: " + text);
  return {static_cast<int>(to_int("trigger loc row", trim(text.substr(0, comma)))),
          static_cast<int>(to_int("trigger loc col", trim(text.substr(comma + 1))))};
}

bitplane::TriggerSpec trigger_from_config(const ExperimentConfig& cfg, int side,
                                          int channels) {
  bitplane::TriggerSpec spec;
  spec.loc_i = resolve_loc(cfg.trigger.loc_i, side, cfg.trigger.patch_size);
  spec.loc_j = resolve_loc(cfg.trigger.loc_j, side, cfg.trigger.patch_size);
  spec.patch_size = cfg.trigger.patch_size;
  spec.k = cfg.trigger.k;
  spec.channels = channels;
  return spec;
}

namespace {

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<img::Image> load_images(const img::DatasetManifest& manifest) {
  std::vector<img::Image> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(img::load_ppm(e.path));
  return out;
}

struct EvalResult {
  Metrics metrics;
  double psnr = 0.0;  // whole-set PSNR between clean and triggered copies
};

// Shared evaluation: `transform` produces the triggered copy; badnets runs
// with force_clean (its backdoor lives in the weights, not the dispatch).
template <typename TransformFn>
EvalResult evaluate(const net::VssModel& model, const img::DatasetManifest& test,
                    const std::vector<img::Image>& images, TransformFn transform,
                    bool force_clean) {
  if (test.entries.empty()) throw std::invalid_argument("empty test set");
  std::size_t clean_hits = 0, trig_hits = 0;
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    int label = test.entries[i].label;
    const img::Image& im = images[i];
    if (argmax(net::model_forward(im, model, force_clean)) == label) ++clean_hits;
    img::Image triggered = transform(im);
    if (argmax(net::model_forward(triggered, model, force_clean)) == label) ++trig_hits;
    for (std::size_t k = 0; k < im.pixels.size(); ++k) {
      double d = static_cast<double>(im.pixels[k]) - static_cast<double>(triggered.pixels[k]);
      sq += d * d;
    }
    count += static_cast<double>(im.pixels.size());
  }
  EvalResult r;
  r.metrics = make_metrics(static_cast<double>(clean_hits) / static_cast<double>(images.size()),
                           static_cast<double>(trig_hits) / static_cast<double>(images.size()));
  r.psnr = sq == 0.0 ? std::numeric_limits<double>::infinity()
                     : 10.0 * std::log10(255.0 * 255.0 * count / sq);
  return r;
}

}  // namespace

Metrics compute_metrics(const net::VssModel& model, const img::DatasetManifest& test,
                        const bitplane::TriggerSpec& spec) {
  auto images = load_images(test);
  return evaluate(
             model, test, images,
             [&](const img::Image& im) { return bitplane::embed_trigger(im, spec); },
             /*force_clean=*/false)
      .metrics;
}

img::Image stamp_visible_patch(const img::Image& image, int patch_size) {
  img::Image patch = img::Image::zeros(patch_size, patch_size, image.channels);
  std::fill(patch.pixels.begin(), patch.pixels.end(), std::uint8_t{255});
  img::PatchLoc corner{image.height - patch_size, image.width - patch_size};
  return img::place_patch(image, corner, patch);
}

img::DatasetManifest poison_dataset(const img::DatasetManifest& train, double ratio,
                                    int source_class, int target_class,
                                    int patch_size, const std::string& out_dir,
                                    std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("poison ratio must be in [0, 1]");
  std::vector<std::size_t> source_idx;
  for (std::size_t i = 0; i < train.entries.size(); ++i)
    if (train.entries[i].label == source_class) source_idx.push_back(i);
  if (source_idx.empty()) throw std::invalid_argument("source class not present in manifest");

  std::size_t poison_count =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(source_idx.size())));
  rng::Sequence pick(rng::Stream(seed).sub(0xBADC0DE));
  pick.shuffle(source_idx);
  source_idx.resize(poison_count);
  std::sort(source_idx.begin(), source_idx.end());

  std::filesystem::create_directories(out_dir);
  img::DatasetManifest out = train;
  int written = 0;
  for (std::size_t idx : source_idx) {
    img::Image im = img::load_ppm(train.entries[idx].path);
    img::Image stamped = stamp_visible_patch(im, patch_size);
    char name[64];
    std::snprintf(name, sizeof(name), "poisoned_%04d.ppm", written++);
    std::string path = (std::filesystem::path(out_dir) / name).generic_string();
    img::save_ppm(stamped, path);
    out.entries[idx].path = path;
    out.entries[idx].label = target_class;
  }
  return out;
}

TimingResult bench_timing(const bitplane::TriggerSpec& spec, const img::Image& image,
                          int repeats) {
  if (repeats < 100) throw std::invalid_argument("bench repeats must be >= 100");
  using clock = std::chrono::steady_clock;
  img::Image triggered = bitplane::embed_trigger(image, spec);

  auto median_of = [](std::vector<double>& times) {
    std::sort(times.begin(), times.end());
    double med = times[times.size() / 2];
    return std::round(med * 1e6) / 1e6;  // microsecond resolution
  };

  std::vector<double> embed_times, detect_times;
  embed_times.reserve(static_cast<std::size_t>(repeats));
  detect_times.reserve(static_cast<std::size_t>(repeats));
  volatile std::uint8_t sink = 0;
  volatile bool bsink = false;
  for (int warm = 0; warm < 16; ++warm) {
    img::Image w = bitplane::embed_trigger(image, spec);
    sink = sink + w.pixels[0];
    bsink = bitplane::detect_trigger(triggered, spec);
  }
  for (int i = 0; i < repeats; ++i) {
    auto t0 = clock::now();
    img::Image w = bitplane::embed_trigger(image, spec);
    auto t1 = clock::now();
    sink = sink + w.pixels[0];
    embed_times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  for (int i = 0; i < repeats; ++i) {
    auto t0 = clock::now();
    bool d = bitplane::detect_trigger(triggered, spec);
    auto t1 = clock::now();
    bsink = bsink ^ d;
    detect_times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  (void)sink;
  (void)bsink;
  TimingResult r;
  r.embed_seconds = median_of(embed_times);
  r.detect_seconds = median_of(detect_times);
  return r;
}

namespace {

std::vector<net::Sample> make_batch(const std::vector<img::Image>& images,
                                    const img::DatasetManifest& manifest,
                                    const std::vector<std::size_t>& order,
                                    std::size_t begin, std::size_t end) {
  std::vector<net::Sample> batch;
  batch.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    batch.push_back({&images[order[i]], manifest.entries[order[i]].label});
  return batch;
}

}  // namespace

net::VssModel train_model(const ExperimentConfig& cfg, const img::DatasetManifest& train,
                          const scan::ScanPlan& badscan_plan,
                          const bitplane::TriggerSpec& trigger,
                          std::uint64_t init_seed, std::uint64_t train_seed,
                          std::ostream* log) {
  auto images = load_images(train);
  if (images.empty()) throw std::invalid_argument("empty training set");

  net::ModelConfig mc;
  mc.patch_size = cfg.model.patch_size;
  mc.embed_dim = cfg.model.embed_dim;
  mc.state_dim = cfg.model.state_dim;
  mc.block_count = cfg.model.block_count;
  mc.class_count = train.class_count;
  mc.channels = images[0].channels;
  mc.init_seed = init_seed;
  net::VssModel model = net::init_model(mc, trigger, badscan_plan);

  net::SgdMomentum opt;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Stream shuffles(train_seed);
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    rng::Sequence shuffle_rng(shuffles.sub(static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.train.batch)) {
      std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.train.batch));
      auto batch = make_batch(images, train, order, begin, end);
      loss_sum += net::train_step(model, batch, cfg.train.lr, cfg.train.momentum, opt);
      ++batches;
    }
    if (log)
      *log << "epoch " << (epoch + 1) << "/" << cfg.train.epochs
           << " mean loss " << (loss_sum / std::max(1, batches)) << "\n";
  }
  return model;
}

namespace {

json metrics_json(const Metrics& m) {
  json j;
  j["cta"] = m.cta;
  j["tta"] = m.tta;
  if (std::isinf(m.tar)) j["tar"] = "inf";
  else j["tar"] = m.tar;
  return j;
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"source", c.dataset.source},
                  {"class_count", c.dataset.class_count},
                  {"per_class", c.dataset.per_class},
                  {"per_class_test", c.dataset.per_class_test},
                  {"side", c.dataset.side},
                  {"seed", c.dataset.seed},
                  {"train_manifest", c.dataset.train_manifest},
                  {"test_manifest", c.dataset.test_manifest}};
  j["model"] = {{"patch_size", c.model.patch_size},
                {"embed_dim", c.model.embed_dim},
                {"state_dim", c.model.state_dim},
                {"block_count", c.model.block_count},
                {"init_seed", c.model.init_seed}};
  j["trigger"] = {{"loc_i", c.trigger.loc_i},
                  {"loc_j", c.trigger.loc_j},
                  {"patch_size", c.trigger.patch_size},
                  {"k", c.trigger.k}};
  j["attack"] = {{"kind", c.attack.kind},
                 {"scan", c.attack.scan},
                 {"drop_rate", c.attack.drop_rate},
                 {"scan_seed", c.attack.scan_seed},
                 {"poison_ratio", c.attack.poison_ratio},
                 {"source_class", c.attack.source_class},
                 {"target_class", c.attack.target_class}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch", c.train.batch},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"seed", c.train.seed}};
  return j;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string format_tar(double tar) {
  return std::isinf(tar) ? "inf" : format_fixed(tar, 2);
}

void write_csv(const std::string& path,
               const std::vector<std::pair<std::string, EvalResult>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << "attack,cta,tta,tar,psnr\n";
  for (const auto& [name, r] : rows) {
    out << name << "," << format_fixed(r.metrics.cta, 4) << ","
        << format_fixed(r.metrics.tta, 4) << "," << format_tar(r.metrics.tar) << ","
        << (std::isinf(r.psnr) ? "inf" : format_fixed(r.psnr, 2)) << "\n";
  }
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                    std::ostream* log) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  auto path_in = [&](const char* name) {
    return (std::filesystem::path(out_dir) / name).generic_string();
  };

  // Datasets: synth derives the test seed from the dataset seed.
  img::DatasetManifest train, test;
  if (cfg.dataset.source == "synth") {
    train = img::synth_dataset(cfg.dataset.class_count, cfg.dataset.per_class,
                               cfg.dataset.side, cfg.dataset.seed, path_in("data/train"));
    test = img::synth_dataset(cfg.dataset.class_count, cfg.dataset.per_class_test,
                              cfg.dataset.side, cfg.dataset.seed ^ 0x7E57DA7AULL,
                              path_in("data/test"));
    img::save_manifest(train, path_in("data/train/manifest.csv"));
    img::save_manifest(test, path_in("data/test/manifest.csv"));
  } else {
    train = img::load_manifest(cfg.dataset.train_manifest);
    test = img::load_manifest(cfg.dataset.test_manifest);
  }
  if (cfg.attack.source_class >= train.class_count ||
      cfg.attack.target_class >= train.class_count)
    throw ConfigError("attack source/target class out of range for dataset");

  img::Image first = img::load_ppm(test.entries.front().path);
  bitplane::TriggerSpec trigger = trigger_from_config(cfg, first.height, first.channels);

  scan::ScanPlan badscan_plan{scan::ScanKind::SS2D, cfg.attack.drop_rate, cfg.attack.scan_seed};
  if (cfg.attack.kind == "badscan")
    badscan_plan.kind = scan::scan_kind_from_string(cfg.attack.scan);

  auto test_images = load_images(test);
  auto embed_transform = [&](const img::Image& im) {
    return bitplane::embed_trigger(im, trigger);
  };
  auto stamp_transform = [&](const img::Image& im) {
    return stamp_visible_patch(im, cfg.trigger.patch_size);
  };

  std::uint64_t retrain_init = cfg.model.init_seed ^ 0x52455452ULL;
  std::uint64_t retrain_train = cfg.train.seed ^ 0x52455452ULL;

  EvalResult before, after;
  bool has_after = false;

  if (cfg.attack.kind == "badscan") {
    net::VssModel model = train_model(cfg, train, badscan_plan, trigger,
                                      cfg.model.init_seed, cfg.train.seed, log);
    net::save_checkpoint(model, path_in("model.ckpt"));
    before = evaluate(model, test, test_images, embed_transform, false);
    net::VssModel retrained = train_model(cfg, train, badscan_plan, trigger,
                                          retrain_init, retrain_train, log);
    net::save_checkpoint(retrained, path_in("model_retrained.ckpt"));
    after = evaluate(retrained, test, test_images, embed_transform, false);
    has_after = true;
  } else if (cfg.attack.kind == "badnets") {
    img::DatasetManifest poisoned =
        poison_dataset(train, cfg.attack.poison_ratio, cfg.attack.source_class,
                       cfg.attack.target_class, cfg.trigger.patch_size,
                       path_in("poisoned"), cfg.train.seed);
    img::save_manifest(poisoned, path_in("poisoned/manifest.csv"));
    net::VssModel model = train_model(cfg, poisoned, badscan_plan, trigger,
                                      cfg.model.init_seed, cfg.train.seed, log);
    net::save_checkpoint(model, path_in("model.ckpt"));
    before = evaluate(model, test, test_images, stamp_transform, true);
    net::VssModel retrained = train_model(cfg, train, badscan_plan, trigger,
                                          retrain_init, retrain_train, log);
    net::save_checkpoint(retrained, path_in("model_retrained.ckpt"));
    after = evaluate(retrained, test, test_images, stamp_transform, true);
    has_after = true;
  } else {  // none: clean control; triggers embedded but the model has no attack
    net::VssModel model = train_model(cfg, train, badscan_plan, trigger,
                                      cfg.model.init_seed, cfg.train.seed, log);
    net::save_checkpoint(model, path_in("model.ckpt"));
    before = evaluate(model, test, test_images, embed_transform, false);
  }

  json results;
  results["config"] = config_json(cfg);
  results["metrics_before_retrain"] = metrics_json(before.metrics);
  results["metrics_after_retrain"] = has_after ? metrics_json(after.metrics) : json(nullptr);
  if (std::isinf(before.psnr)) results["psnr"] = "inf";
  else results["psnr"] = before.psnr;
  results["timing"] = nullptr;  // measured by the bench subcommand only
  results["versions"] = {{"artifact", "0.1.0"}, {"results_schema", 1}, {"checkpoint", 1}};

  std::ofstream jout(path_in("results.json"), std::ios::trunc);
  if (!jout) throw std::runtime_error("cannot write results.json");
  jout << results.dump(2) << "\n";

  std::vector<std::pair<std::string, EvalResult>> rows;
  rows.emplace_back(cfg.attack.kind, before);
  if (has_after) rows.emplace_back(cfg.attack.kind + "_from_scratch", after);
  write_csv(path_in("results.csv"), rows);
}

std::string report(const std::vector<std::string>& results_paths) {
  std::ostringstream out;
  out << "# BadScan experiment report\n\n";
  out << "Metrics are computed over the whole test set; TTA applies the trigger\n"
         "to every test image (the attack is untargeted).\n\n";
  out << "| Attack | CTA | TTA | TAR | PSNR (dB) |\n";
  out << "|--------|-----|-----|-----|-----------|\n";

  std::ostringstream retrain_rows;
  std::ostringstream timing_rows;
  for (const auto& path : results_paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing results file: " + path);
    json j = json::parse(in, nullptr, true);
    if (!j.contains("metrics_before_retrain"))
      throw std::runtime_error("results file missing metrics: " + path);
    auto render = [](const json& m, const json& psnr) {
      std::string tar = m["tar"].is_string() ? m["tar"].get<std::string>()
                                             : format_fixed(m["tar"].get<double>(), 2);
      std::string ps = psnr.is_null() ? "n/a"
                       : psnr.is_string() ? psnr.get<std::string>()
                                          : format_fixed(psnr.get<double>(), 2);
      return "| " + format_fixed(m["cta"].get<double>() * 100.0, 2) + " | " +
             format_fixed(m["tta"].get<double>() * 100.0, 2) + " | " + tar + " | " + ps + " |";
    };
    std::string kind = j["config"]["attack"]["kind"].get<std::string>();
    out << "| " << kind << " " << render(j["metrics_before_retrain"], j["psnr"]) << "\n";
    if (!j["metrics_after_retrain"].is_null())
      retrain_rows << "| " << kind << " (from scratch) "
                   << render(j["metrics_after_retrain"], j["psnr"]) << "\n";
    if (j.contains("timing") && !j["timing"].is_null()) {
      timing_rows << "| " << kind << " | "
                  << format_fixed(j["timing"]["embed_seconds"].get<double>(), 6) << " | "
                  << format_fixed(j["timing"]["detect_seconds"].get<double>(), 6) << " |\n";
    }
  }
  std::string retrained = retrain_rows.str();
  if (!retrained.empty()) {
    out << "\n## After retraining from scratch on clean data\n\n";
    out << "| Attack | CTA | TTA | TAR | PSNR (dB) |\n";
    out << "|--------|-----|-----|-----|-----------|\n";
    out << retrained;
  }
  std::string timing = timing_rows.str();
  if (!timing.empty()) {
    out << "\n## Timing (median seconds per call)\n\n";
    out << "| Attack | embed | detect |\n";
    out << "|--------|-------|--------|\n";
    out << timing;
  }
  return out.str();
}

}  // namespace badscan::harness
