#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "cascade3d/errors.hpp"
#include "cascade3d/memory_model.hpp"
#include "cascade3d/metrics.hpp"
#include "cascade3d/phantom.hpp"
#include "cascade3d/scale_plan.hpp"
#include "cascade3d/sketch.hpp"
#include "cascade3d/volume.hpp"

namespace py = pybind11;
using namespace cascade3d;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Volume3 to_volume(const Array& a) {
  if (a.ndim() != 3) throw ValidationError("expected a 3-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const Shape3 s{a.shape(0), a.shape(1), a.shape(2)};
  return Volume3(s, {}, std::span<const float>(a.data(), static_cast<std::size_t>(a.size())));
}

Array to_array(const Volume3& v) {
  const Shape3 s = v.shape();
  Array out({s.nz, s.ny, s.nx});
  std::copy(v.voxels().begin(), v.voxels().end(), out.mutable_data());
  return out;
}

py::tuple shape_tuple(const Shape3& s) { return py::make_tuple(s.nz, s.ny, s.nx); }

Shape3 to_shape(const std::array<std::int64_t, 3>& s) { return {s[0], s[1], s[2]}; }

py::dict box_dict(const Box3& b) {
  py::dict d;
  d["lo"] = b.lo;
  d["size"] = b.size;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-scale patch cascade for large 3D volume translation";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ArithmeticError);

  py::enum_<PhantomDomain>(m, "PhantomDomain")
      .value("smooth", PhantomDomain::smooth)
      .value("noisy", PhantomDomain::noisy);

  m.def(
      "load_volume", [](const std::filesystem::path& p) { return to_array(load_volume(p)); }, py::arg("path"));
  m.def(
      "save_volume", [](const Array& a, const std::filesystem::path& p) { save_volume(to_volume(a), p); },
      py::arg("volume"), py::arg("path"));
  m.def(
      "resample_trilinear",
      [](const Array& a, const std::array<std::int64_t, 3>& shape) {
        return to_array(resample_trilinear(to_volume(a), to_shape(shape)));
      },
      py::arg("volume"), py::arg("shape"));

  m.def(
      "gen_phantom",
      [](std::uint64_t seed, std::int64_t side, int blobs, PhantomDomain domain, double lesion_radius) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.side = side;
        spec.n_blobs = blobs;
        spec.domain = domain;
        if (lesion_radius > 0) {
          const double c = (static_cast<double>(side) - 1) / 2;
          spec.lesion = Lesion{lesion_radius, {c, c, c}};
        }
        const Phantom p = gen_phantom(spec);
        py::dict out;
        out["volume"] = to_array(p.volume);
        out["mask"] = to_array(p.mask);
        out["geometry"] = to_array(p.geometry);
        return out;
      },
      py::arg("seed") = 0, py::arg("side") = 64, py::arg("blobs") = 6, py::arg("domain") = PhantomDomain::smooth,
      py::arg("lesion_radius") = 0.0);

  m.def(
      "canny3d",
      [](const Array& a) {
        const Sketch s = canny3d(to_volume(a));
        return py::make_tuple(to_array(s.field), s.degenerate);
      },
      py::arg("volume"), "Edge sketch of a volume; returns (field, degenerate).");

  m.def(
      "ssim3d", [](const Array& a, const Array& b) { return ssim3d(to_volume(a), to_volume(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "mae", [](const Array& a, const Array& b) { return mae(to_volume(a), to_volume(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "mse", [](const Array& a, const Array& b) { return mse(to_volume(a), to_volume(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "psnr", [](const Array& a, const Array& b) { return psnr(to_volume(a), to_volume(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "paired_ttest",
      [](const std::vector<double>& xs, const std::vector<double>& ys) {
        const TTestResult r = paired_ttest(xs, ys);
        return py::make_tuple(r.t, r.p, r.df);
      },
      py::arg("xs"), py::arg("ys"), "Two-sided paired t-test; returns (t, p, df).");

  py::class_<ScalePlan>(m, "ScalePlan")
      .def_property_readonly("original_shape", [](const ScalePlan& p) { return shape_tuple(p.original_shape); })
      .def_readonly("lr_side", &ScalePlan::lr_side)
      .def_readonly("patch_side", &ScalePlan::patch_side)
      .def_readonly("n_scales", &ScalePlan::n_scales)
      .def("working_shape", [](const ScalePlan& p, int i) { return shape_tuple(p.working_shape_at(i)); })
      .def_property_readonly("crop_box", [](const ScalePlan& p) { return box_dict(p.crop_box()); })
      .def("to_json", [](const ScalePlan& p, std::int64_t margin) { return plan_to_json(p, margin, false).dump(); },
           py::arg("valid_margin") = 4);

  m.def(
      "plan_scales",
      [](const std::array<std::int64_t, 3>& shape, std::int64_t lr, std::int64_t patch) {
        return plan_scales(to_shape(shape), lr, patch);
      },
      py::arg("shape"), py::arg("lr_side") = 64, py::arg("patch_side") = 32);

  m.def(
      "patch_grid",
      [](const ScalePlan& plan, int scale, std::int64_t margin) {
        py::list out;
        for (const auto& j : patch_grid(plan, scale, margin)) {
          py::dict d;
          d["out_region"] = box_dict(j.out_region);
          d["in_region"] = box_dict(j.in_region);
          d["paste_region"] = box_dict(j.paste_region);
          out.append(d);
        }
        return out;
      },
      py::arg("plan"), py::arg("scale"), py::arg("valid_margin") = 4);

  m.def("memory_architectures", &memory_architectures);
  m.def(
      "estimate_memory",
      [](const std::string& arch, std::int64_t side) {
        const MemoryReport r = estimate_memory(arch, side);
        py::dict d;
        d["arch"] = r.arch;
        d["side"] = r.side;
        d["activations_g"] = r.activations_g;
        d["activations_d"] = r.activations_d;
        d["params"] = r.params;
        d["grads"] = r.grads;
        d["optimizer"] = r.optimizer;
        d["images"] = r.images;
        d["total"] = r.total;
        return d;
      },
      py::arg("arch"), py::arg("side"));
}
