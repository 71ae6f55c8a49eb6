#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "umcf/eval.hpp"
#include "umcf/fusion.hpp"
#include "umcf/io.hpp"
#include "umcf/uncertainty.hpp"

namespace py = pybind11;

namespace {

using umcf::ProbMaps;
using umcf::VoxelGrid;

// numpy array indexed [x, y, z] or [x, y, z, c]  <->  VoxelGrid.
VoxelGrid grid_from_array(const py::array_t<double>& arr) {
  const py::buffer_info info = arr.request();
  if (info.ndim != 3 && info.ndim != 4) {
    throw umcf::ValidationError("expected a 3-D or 4-D array");
  }
  const std::size_t h = static_cast<std::size_t>(info.shape[0]);
  const std::size_t w = static_cast<std::size_t>(info.shape[1]);
  const std::size_t d = static_cast<std::size_t>(info.shape[2]);
  const std::size_t c = info.ndim == 4 ? static_cast<std::size_t>(info.shape[3]) : 1;
  VoxelGrid g(h, w, d, c);
  const auto a = arr.unchecked();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < d; ++z) {
      for (std::size_t y = 0; y < w; ++y) {
        for (std::size_t x = 0; x < h; ++x) {
          const double v =
              info.ndim == 4
                  ? a(static_cast<py::ssize_t>(x), static_cast<py::ssize_t>(y),
                      static_cast<py::ssize_t>(z), static_cast<py::ssize_t>(ch))
                  : a(static_cast<py::ssize_t>(x), static_cast<py::ssize_t>(y),
                      static_cast<py::ssize_t>(z));
          g.at(x, y, z, ch) = v;
        }
      }
    }
  }
  return g;
}

py::array_t<double> array_from_grid(const VoxelGrid& g) {
  py::array_t<double> arr;
  if (g.c == 1) {
    arr = py::array_t<double>({g.h, g.w, g.d});
  } else {
    arr = py::array_t<double>({g.h, g.w, g.d, g.c});
  }
  auto a = arr.mutable_unchecked();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t z = 0; z < g.d; ++z) {
      for (std::size_t y = 0; y < g.w; ++y) {
        for (std::size_t x = 0; x < g.h; ++x) {
          if (g.c == 1) {
            a(static_cast<py::ssize_t>(x), static_cast<py::ssize_t>(y),
              static_cast<py::ssize_t>(z)) = g.at(x, y, z);
          } else {
            a(static_cast<py::ssize_t>(x), static_cast<py::ssize_t>(y),
              static_cast<py::ssize_t>(z), static_cast<py::ssize_t>(ch)) =
                g.at(x, y, z, ch);
          }
        }
      }
    }
  }
  return arr;
}

ProbMaps probmaps_from_arrays(const py::array_t<double>& et,
                              const py::array_t<double>& tc,
                              const py::array_t<double>& wt) {
  const VoxelGrid ge = grid_from_array(et);
  const VoxelGrid gt = grid_from_array(tc);
  const VoxelGrid gw = grid_from_array(wt);
  if (!ge.same_shape(gt) || !ge.same_shape(gw) || ge.c != 1) {
    throw umcf::ValidationError("probability maps must be scalar arrays of one shape");
  }
  ProbMaps p(ge.h, ge.w, ge.d);
  p.maps[0] = ge.data;
  p.maps[1] = gt.data;
  p.maps[2] = gw.data;
  p.validate();
  return p;
}

umcf::FusionConfig config_from_kwargs(const py::dict& kw) {
  umcf::FusionConfig cfg;
  for (const auto& item : kw) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "tau") cfg.tau = py::cast<double>(item.second);
    else if (key == "lambda_" || key == "lambda") cfg.lambda = py::cast<double>(item.second);
    else if (key == "iterations") cfg.iterations = py::cast<std::size_t>(item.second);
    else if (key == "block") cfg.block = py::cast<std::size_t>(item.second);
    else if (key == "w_hier") cfg.w_hier = py::cast<double>(item.second);
    else if (key == "w_topo") cfg.w_topo = py::cast<double>(item.second);
    else if (key == "refresh_probmaps") cfg.refresh_probmaps = py::cast<bool>(item.second);
    else if (key == "renormalize_each_iter") cfg.renormalize_each_iter = py::cast<bool>(item.second);
    else if (key == "disable_mV") cfg.disable_mV = py::cast<bool>(item.second);
    else if (key == "disable_mT") cfg.disable_mT = py::cast<bool>(item.second);
    else if (key == "disable_mS") cfg.disable_mS = py::cast<bool>(item.second);
    else if (key == "disable_mTS") cfg.disable_mTS = py::cast<bool>(item.second);
    else if (key == "disable_pfug") cfg.disable_pfug = py::cast<bool>(item.second);
    else if (key == "pairwise_mode") cfg.pairwise_mode = py::cast<bool>(item.second);
    else if (key == "disable_bias") cfg.disable_bias = py::cast<bool>(item.second);
    else throw umcf::ValidationError("config: unknown key \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_umcf, m) {
  m.doc() = "Multimodal coherent field fusion core";

  py::register_exception<umcf::ValidationError>(m, "UmcfValidationError", PyExc_ValueError);
  py::register_exception<umcf::IoError>(m, "UmcfIoError", PyExc_IOError);

  m.def("logistic", &umcf::logistic, py::arg("x"));

  m.def(
      "l2_normalize",
      [](const std::vector<double>& v) {
        const auto u = umcf::l2_normalize(v);
        return py::make_tuple(u.values, u.degenerate);
      },
      py::arg("v"), "Returns (unit_vector, degenerate).");

  m.def(
      "tempered_softmax",
      [](const std::vector<double>& scores, double tau) {
        return umcf::tempered_softmax(scores, umcf::Temperature(tau));
      },
      py::arg("scores"), py::arg("tau"));

  m.def(
      "signed_distance_transform",
      [](const py::array_t<double>& mask) {
        const auto r = umcf::signed_distance_transform(grid_from_array(mask));
        return py::make_tuple(array_from_grid(r.sdt), r.degenerate);
      },
      py::arg("mask"), "Exact signed EDT; returns (sdt, degenerate).");

  m.def(
      "sym3_eigenvalues",
      [](const std::array<std::array<double, 3>, 3>& mat) {
        return umcf::sym3_eigenvalues(mat);
      },
      py::arg("matrix"));

  m.def(
      "dice",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return umcf::dice(grid_from_array(a), grid_from_array(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "hierarchy_violation_rate",
      [](const py::array_t<double>& et, const py::array_t<double>& tc,
         const py::array_t<double>& wt, double threshold) {
        return umcf::hierarchy_violation_rate(probmaps_from_arrays(et, tc, wt),
                                              threshold);
      },
      py::arg("et"), py::arg("tc"), py::arg("wt"), py::arg("threshold") = 0.5);

  m.def(
      "spatial_stats",
      [](const py::array_t<double>& et, const py::array_t<double>& tc,
         const py::array_t<double>& wt) {
        const ProbMaps p = probmaps_from_arrays(et, tc, wt);
        py::list out;
        for (const umcf::TumorClass c : umcf::kTumorClasses) {
          const auto s = umcf::compute_spatial_stats(p, c);
          py::dict d;
          d["class"] = umcf::to_string(c);
          d["centroid"] = s.centroid;
          d["eigenvalues"] = s.eigenvalues;
          d["mean_sdt"] = s.mean_sdt;
          d["degenerate"] = s.degenerate;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("et"), py::arg("tc"), py::arg("wt"));

  m.def(
      "generate_phantom",
      [](std::size_t size, std::uint64_t seed, std::size_t feature_dim,
         double feature_noise, std::size_t blur_radius, double violation_rate) {
        umcf::PhantomSpec spec;
        spec.h = spec.w = spec.d = size;
        const double s = static_cast<double>(size) / 32.0;
        for (auto* e : {&spec.wt, &spec.tc, &spec.et}) {
          for (auto& v : e->center) v *= s;
          for (auto& v : e->semi_axes) v *= s;
        }
        spec.seed = seed;
        spec.feature_dim = feature_dim;
        spec.feature_noise = feature_noise;
        spec.blur_radius = blur_radius;
        spec.violation_rate = violation_rate;
        const auto ph = umcf::generate_phantom(spec);
        py::dict out;
        out["mask_et"] = array_from_grid(ph.masks[0]);
        out["mask_tc"] = array_from_grid(ph.masks[1]);
        out["mask_wt"] = array_from_grid(ph.masks[2]);
        out["features"] = array_from_grid(ph.features);
        for (std::size_t ci = 0; ci < 3; ++ci) {
          umcf::VoxelGrid g(ph.probmaps.h, ph.probmaps.w, ph.probmaps.d, 1, 0.0);
          g.data = ph.probmaps.maps[ci];
          const char* names[3] = {"prob_et", "prob_tc", "prob_wt"};
          out[names[ci]] = array_from_grid(g);
        }
        py::list anchors;
        for (const auto& a : ph.anchors) anchors.append(a);
        out["anchors"] = std::move(anchors);
        return out;
      },
      py::arg("size") = 32, py::arg("seed") = 42, py::arg("feature_dim") = 8,
      py::arg("feature_noise") = 0.5, py::arg("blur_radius") = 1,
      py::arg("violation_rate") = 0.0,
      "Synthetic nested-ellipsoid case scaled to `size`^3.");

  m.def(
      "run_fusion",
      [](const py::array_t<double>& features,
         const std::vector<std::vector<double>>& semantic_tokens,
         const py::array_t<double>& et, const py::array_t<double>& tc,
         const py::array_t<double>& wt, const py::kwargs& kwargs) {
        const VoxelGrid field = grid_from_array(features);
        const ProbMaps p = probmaps_from_arrays(et, tc, wt);
        const umcf::FusionConfig cfg = config_from_kwargs(kwargs);

        std::vector<umcf::UnitVector> toks;
        toks.reserve(semantic_tokens.size());
        for (const auto& t : semantic_tokens) toks.push_back(umcf::l2_normalize(t));
        const umcf::TokenSet semantic =
            umcf::make_token_set(umcf::Modality::semantic, field.c, std::move(toks));

        const auto result = umcf::run_fusion(field, semantic, p, cfg);

        py::dict out;
        out["field"] = array_from_grid(result.field);
        for (std::size_t ci = 0; ci < 3; ++ci) {
          umcf::VoxelGrid g(result.probmaps.h, result.probmaps.w, result.probmaps.d, 1, 0.0);
          g.data = result.probmaps.maps[ci];
          const char* names[3] = {"prob_et", "prob_tc", "prob_wt"};
          out[names[ci]] = array_from_grid(g);
        }
        py::list residuals, gate_means;
        for (const auto& it : result.diagnostics.iterations) {
          residuals.append(it.residual);
          gate_means.append(it.mean_gate);
        }
        out["residuals"] = std::move(residuals);
        out["gate_means"] = std::move(gate_means);
        return out;
      },
      py::arg("features"), py::arg("semantic_tokens"), py::arg("et"), py::arg("tc"),
      py::arg("wt"),
      "Full fusion pass; config values (tau, lambda_, iterations, ...) as kwargs.");

  m.def(
      "read_volume",
      [](const std::string& path) { return array_from_grid(umcf::read_volume(path)); },
      py::arg("path"));

  m.def(
      "write_volume",
      [](const std::string& path, const py::array_t<double>& arr) {
        umcf::write_volume(path, grid_from_array(arr));
      },
      py::arg("path"), py::arg("array"));

  m.attr("__version__") = "0.1.0";
}
