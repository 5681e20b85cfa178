#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "badscan/bitplane.hpp"
#include "badscan/harness.hpp"
#include "badscan/imagecore.hpp"
#include "badscan/net.hpp"
#include "badscan/scanlib.hpp"
#include "badscan/ssm.hpp"

namespace py = pybind11;
using namespace badscan;

namespace {

// uint8 arrays: (H, W) for grayscale, (H, W, 3) for color.
img::Image image_from_array(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> arr) {
  auto info = arr.request();
  int channels = 1;
  if (info.ndim == 3) {
    channels = static_cast<int>(info.shape[2]);
    if (channels != 1 && channels != 3)
      throw std::invalid_argument("last axis must be 1 or 3 channels");
  } else if (info.ndim != 2) {
    throw std::invalid_argument("image array must be 2-D or 3-D");
  }
  img::Image im = img::Image::zeros(static_cast<int>(info.shape[0]),
                                    static_cast<int>(info.shape[1]), channels);
  std::memcpy(im.pixels.data(), info.ptr, im.pixels.size());
  return im;
}

py::array image_to_array(const img::Image& im) {
  if (im.channels == 1) {
    py::array_t<std::uint8_t> out({im.height, im.width});
    std::memcpy(out.request().ptr, im.pixels.data(), im.pixels.size());
    return out;
  }
  py::array_t<std::uint8_t> out({im.height, im.width, im.channels});
  std::memcpy(out.request().ptr, im.pixels.data(), im.pixels.size());
  return out;
}

ssm::DiscreteSsm discrete_from_arrays(py::array_t<double, py::array::c_style | py::array::forcecast> e_bar,
                                      py::array_t<double, py::array::c_style | py::array::forcecast> f_bar,
                                      py::array_t<double, py::array::c_style | py::array::forcecast> g) {
  auto eb = e_bar.request();
  if (eb.ndim != 2 || eb.shape[0] != eb.shape[1])
    throw std::invalid_argument("E_bar must be square");
  int m = static_cast<int>(eb.shape[0]);
  ssm::DiscreteSsm d;
  d.E_bar = ssm::Mat(m, m);
  std::memcpy(d.E_bar.a.data(), eb.ptr, sizeof(double) * d.E_bar.a.size());
  auto fb = f_bar.request();
  auto gb = g.request();
  if (fb.size != m || gb.size != m)
    throw std::invalid_argument("F_bar and G must have length M");
  d.F_bar.assign(static_cast<double*>(fb.ptr), static_cast<double*>(fb.ptr) + m);
  d.G.assign(static_cast<double*>(gb.ptr), static_cast<double*>(gb.ptr) + m);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "BadScan: bit-plane triggers, corrupted selective scans, and the "
            "experiment harness around them";

  py::class_<bitplane::TriggerSpec>(m, "TriggerSpec")
      .def(py::init([](std::pair<int, int> loc_i, std::pair<int, int> loc_j,
                       int patch_size, int k, int channels) {
             bitplane::TriggerSpec s;
             s.loc_i = {loc_i.first, loc_i.second};
             s.loc_j = {loc_j.first, loc_j.second};
             s.patch_size = patch_size;
             s.k = k;
             s.channels = channels;
             return s;
           }),
           py::arg("loc_i"), py::arg("loc_j"), py::arg("patch_size") = 4,
           py::arg("k") = 1, py::arg("channels") = 3)
      .def_property_readonly("loc_i", [](const bitplane::TriggerSpec& s) {
        return std::make_pair(s.loc_i.row, s.loc_i.col);
      })
      .def_property_readonly("loc_j", [](const bitplane::TriggerSpec& s) {
        return std::make_pair(s.loc_j.row, s.loc_j.col);
      })
      .def_readonly("patch_size", &bitplane::TriggerSpec::patch_size)
      .def_readonly("k", &bitplane::TriggerSpec::k)
      .def_readonly("channels", &bitplane::TriggerSpec::channels);

  m.def("corner_trigger", [](int side, int channels, int patch_size, int k) {
    img::Image probe = img::Image::zeros(side, side, channels);
    return bitplane::TriggerSpec::corners_for(probe, patch_size, k);
  }, py::arg("side"), py::arg("channels") = 3, py::arg("patch_size") = 4,
     py::arg("k") = 1,
     "Top-left plus bottom-left trigger spec for a square image side.");

  m.def("load_ppm", [](const std::string& path) {
    return image_to_array(img::load_ppm(path));
  }, py::arg("path"));
  m.def("save_ppm", [](py::array arr, const std::string& path) {
    img::save_ppm(image_from_array(arr), path);
  }, py::arg("image"), py::arg("path"));

  m.def("extract_patch", [](py::array arr, int row, int col, int size) {
    return image_to_array(img::extract_patch(image_from_array(arr), {row, col}, size));
  }, py::arg("image"), py::arg("row"), py::arg("col"), py::arg("size"));
  m.def("place_patch", [](py::array arr, int row, int col, py::array patch) {
    return image_to_array(
        img::place_patch(image_from_array(arr), {row, col}, image_from_array(patch)));
  }, py::arg("image"), py::arg("row"), py::arg("col"), py::arg("patch"));

  m.def("synth_dataset", [](int class_count, int per_class, int side,
                            std::uint64_t seed, const std::string& out_dir) {
    img::DatasetManifest manifest =
        img::synth_dataset(class_count, per_class, side, seed, out_dir);
    std::vector<std::pair<std::string, int>> entries;
    for (const auto& e : manifest.entries) entries.emplace_back(e.path, e.label);
    return entries;
  }, py::arg("class_count"), py::arg("per_class"), py::arg("side"),
     py::arg("seed"), py::arg("out_dir"));

  m.def("embed_trigger", [](py::array arr, const bitplane::TriggerSpec& spec) {
    return image_to_array(bitplane::embed_trigger(image_from_array(arr), spec));
  }, py::arg("image"), py::arg("spec"));
  m.def("detect_trigger", [](py::array arr, const bitplane::TriggerSpec& spec) {
    return bitplane::detect_trigger(image_from_array(arr), spec);
  }, py::arg("image"), py::arg("spec"));
  m.def("psnr", [](py::array a, py::array b) {
    return bitplane::psnr(image_from_array(a), image_from_array(b));
  }, py::arg("a"), py::arg("b"));

  m.def("slice_planes", [](py::array arr) {
    bitplane::BitPlanes bp = bitplane::slice(image_from_array(arr));
    py::array_t<std::uint8_t> out({bp.channels, 8, bp.side, bp.side});
    auto* dst = static_cast<std::uint8_t*>(out.request().ptr);
    for (int ch = 0; ch < bp.channels; ++ch)
      for (int p = 0; p < 8; ++p)
        for (int i = 0; i < bp.side * bp.side; ++i)
          *dst++ = bp.planes[ch][p][static_cast<std::size_t>(i)];
    return out;
  }, py::arg("patch"), "Planes as (channels, 8, side, side), plane 0 = LSB.");

  m.def("discretize_zoh", [](py::array_t<double, py::array::c_style | py::array::forcecast> e,
                             py::array_t<double, py::array::c_style | py::array::forcecast> f,
                             py::array_t<double, py::array::c_style | py::array::forcecast> g,
                             double delta) {
    auto eb = e.request();
    if (eb.ndim != 2 || eb.shape[0] != eb.shape[1])
      throw std::invalid_argument("E must be square");
    int m_dim = static_cast<int>(eb.shape[0]);
    ssm::SsmParams p;
    p.E = ssm::Mat(m_dim, m_dim);
    std::memcpy(p.E.a.data(), eb.ptr, sizeof(double) * p.E.a.size());
    auto fb = f.request();
    auto gb = g.request();
    if (fb.size != m_dim || gb.size != m_dim)
      throw std::invalid_argument("F and G must have length M");
    p.F.assign(static_cast<double*>(fb.ptr), static_cast<double*>(fb.ptr) + m_dim);
    p.G.assign(static_cast<double*>(gb.ptr), static_cast<double*>(gb.ptr) + m_dim);
    p.delta = delta;
    ssm::DiscreteSsm d = ssm::discretize_zoh(p);
    py::array_t<double> e_bar({m_dim, m_dim});
    std::memcpy(e_bar.request().ptr, d.E_bar.a.data(), sizeof(double) * d.E_bar.a.size());
    py::array_t<double> f_bar(m_dim);
    std::memcpy(f_bar.request().ptr, d.F_bar.data(), sizeof(double) * d.F_bar.size());
    return std::make_pair(e_bar, f_bar);
  }, py::arg("E"), py::arg("F"), py::arg("G"), py::arg("delta"));

  m.def("scan_recurrent", [](py::array_t<double, py::array::c_style | py::array::forcecast> e_bar,
                             py::array_t<double, py::array::c_style | py::array::forcecast> f_bar,
                             py::array_t<double, py::array::c_style | py::array::forcecast> g,
                             py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    ssm::DiscreteSsm d = discrete_from_arrays(e_bar, f_bar, g);
    auto xb = x.request();
    std::span<const double> xs(static_cast<double*>(xb.ptr), static_cast<std::size_t>(xb.size));
    return py::array(py::cast(ssm::scan_recurrent(d, xs)));
  }, py::arg("E_bar"), py::arg("F_bar"), py::arg("G"), py::arg("x"));

  m.def("kernel", [](py::array_t<double, py::array::c_style | py::array::forcecast> e_bar,
                     py::array_t<double, py::array::c_style | py::array::forcecast> f_bar,
                     py::array_t<double, py::array::c_style | py::array::forcecast> g,
                     int length) {
    return py::array(py::cast(ssm::kernel(discrete_from_arrays(e_bar, f_bar, g), length)));
  }, py::arg("E_bar"), py::arg("F_bar"), py::arg("G"), py::arg("length"));

  m.def("apply_kernel", [](py::array_t<double, py::array::c_style | py::array::forcecast> v,
                           py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    auto vb = v.request();
    auto xb = x.request();
    std::span<const double> vs(static_cast<double*>(vb.ptr), static_cast<std::size_t>(vb.size));
    std::span<const double> xs(static_cast<double*>(xb.ptr), static_cast<std::size_t>(xb.size));
    return py::array(py::cast(ssm::apply_kernel(vs, xs)));
  }, py::arg("v"), py::arg("x"));

  m.def("ss2d_orders", &scan::ss2d_orders, py::arg("rows"), py::arg("cols"));
  m.def("efficient_groups", &scan::efficient_groups, py::arg("rows"), py::arg("cols"));

  m.def("badscan_origins", [](int rows, int cols, const std::string& kind,
                              double drop_rate, std::uint64_t seed) {
    scan::ScanPlan plan{scan::scan_kind_from_string(kind), drop_rate, seed};
    scan::ScanRoute route = scan::plan_route(rows, cols, plan);
    std::vector<std::vector<std::tuple<std::string, int, int>>> out(4);
    for (int d = 0; d < 4; ++d)
      for (const auto& o : route.origins[static_cast<std::size_t>(d)])
        out[static_cast<std::size_t>(d)].emplace_back(
            o.kind == scan::Origin::Kind::Single ? "single" : "pair", o.i, o.j);
    return out;
  }, py::arg("rows"), py::arg("cols"), py::arg("kind"),
     py::arg("drop_rate") = 0.2, py::arg("seed") = 0);

  py::class_<net::VssModel>(m, "VssModel")
      .def_property_readonly("class_count",
                             [](const net::VssModel& m) { return m.config.class_count; })
      .def_property_readonly("embed_dim",
                             [](const net::VssModel& m) { return m.config.embed_dim; })
      .def("forward", [](const net::VssModel& model, py::array arr, bool force_clean) {
        return py::array(py::cast(net::model_forward(image_from_array(arr), model, force_clean)));
      }, py::arg("image"), py::arg("force_clean") = false)
      .def("would_dispatch_badscan", [](const net::VssModel& model, py::array arr) {
        return net::would_dispatch_badscan(image_from_array(arr), model);
      }, py::arg("image"));

  m.def("load_checkpoint", &net::load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &net::save_checkpoint, py::arg("model"), py::arg("path"));

  m.def("compute_metrics", [](const net::VssModel& model, const std::string& manifest_csv,
                              const bitplane::TriggerSpec& spec) {
    harness::Metrics metrics =
        harness::compute_metrics(model, img::load_manifest(manifest_csv), spec);
    return std::make_tuple(metrics.cta, metrics.tta, metrics.tar);
  }, py::arg("model"), py::arg("manifest_csv"), py::arg("spec"));

  m.def("run_experiment", [](const std::string& config_path, const std::string& out_dir,
                             py::object seed) {
    harness::ExperimentConfig cfg = harness::parse_config(config_path);
    if (!seed.is_none()) harness::override_seeds(cfg, seed.cast<std::uint64_t>());
    harness::run_experiment(cfg, out_dir);
  }, py::arg("config_path"), py::arg("out_dir"), py::arg("seed") = py::none());

  m.def("bench_timing", [](const bitplane::TriggerSpec& spec, py::array arr, int repeats) {
    harness::TimingResult t = harness::bench_timing(spec, image_from_array(arr), repeats);
    return std::make_pair(t.embed_seconds, t.detect_seconds);
  }, py::arg("spec"), py::arg("image"), py::arg("repeats") = 200);

  m.def("report", &harness::report, py::arg("results_paths"));

  m.attr("__version__") = "0.1.0";
}
