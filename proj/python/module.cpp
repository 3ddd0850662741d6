// Python bindings for the cloudmask pipeline: scene synthesis, dataset I/O,
// patch geometry, the U-Net, single runs and campaign aggregation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cloudmask/bench.hpp"
#include "cloudmask/gradcheck.hpp"
#include "cloudmask/pipeline.hpp"

namespace py = pybind11;
using namespace cloudmask;

namespace {

py::array_t<float> image_to_array(const MultiChannelImage& img) {
  py::array_t<float> out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_to_array(const MaskImage& mask) {
  py::array_t<std::uint8_t> out({mask.height, mask.width});
  std::copy(mask.data.begin(), mask.data.end(), out.mutable_data());
  return out;
}

MultiChannelImage image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw ShapeError("expected a (channels, height, width) array");
  MultiChannelImage img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(2)),
                        static_cast<int>(arr.shape(0)));
  std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
  return img;
}

MaskImage mask_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw ShapeError("expected a (height, width) array");
  MaskImage mask(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), mask.data.begin());
  return mask;
}

Tensor batch_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 4) throw ShapeError("expected a (batch, channels, height, width) array");
  Tensor t(Shape{static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(2)),
                 static_cast<int>(arr.shape(3))});
  std::copy(arr.data(), arr.data() + arr.size(), t.data.begin());
  return t;
}

py::array_t<float> batch_to_array(const Tensor& t) {
  py::array_t<float> out({t.dim(0), t.dim(1), t.dim(2), t.dim(3)});
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

UNetConfig config_from_kwargs(int in_channels, int depth, int base_channels, int kernel_size, int patch_size) {
  UNetConfig cfg;
  cfg.in_channels = in_channels;
  cfg.depth = depth;
  cfg.base_channels = base_channels;
  cfg.kernel_size = kernel_size;
  cfg.patch_size = patch_size;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Desk-scale cloud-masking benchmark pipeline";

  py::register_exception<Error>(m, "CloudmaskError", PyExc_RuntimeError);

  py::class_<UNetConfig>(m, "UNetConfig")
      .def(py::init(&config_from_kwargs), py::arg("in_channels") = 9, py::arg("depth") = 2,
           py::arg("base_channels") = 8, py::arg("kernel_size") = 3, py::arg("patch_size") = 64)
      .def_readonly("in_channels", &UNetConfig::in_channels)
      .def_readonly("depth", &UNetConfig::depth)
      .def_readonly("base_channels", &UNetConfig::base_channels)
      .def_readonly("kernel_size", &UNetConfig::kernel_size)
      .def_readonly("patch_size", &UNetConfig::patch_size);

  py::class_<ModelParams>(m, "Model")
      .def_property_readonly("config", [](const ModelParams& p) { return p.config; })
      .def_property_readonly("parameter_count", &ModelParams::total_elements)
      .def("forward",
           [](const ModelParams& p, const py::array_t<float, py::array::c_style | py::array::forcecast>& batch) {
             return batch_to_array(unet_forward(p, batch_from_array(batch)));
           },
           py::arg("batch"), "Probabilities for a (batch, channels, P, P) input")
      .def("save",
           [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(p, nullptr, path); },
           py::arg("path"));

  m.def("build_unet", &build_unet, py::arg("config"), py::arg("seed"));
  m.def("param_count", &param_count, py::arg("config"));
  m.def(
      "load_model",
      [](const std::filesystem::path& path) { return load_checkpoint(path).params; },
      py::arg("path"));

  m.def(
      "generate_scene",
      [](std::uint64_t seed, int height, int width, int forced_bumps) {
        SceneOptions opts;
        opts.forced_bumps = forced_bumps;
        const Scene s = generate_scene(seed, height, width, opts);
        return py::make_tuple(image_to_array(s.image), mask_to_array(s.mask));
      },
      py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("forced_bumps") = -1,
      "Returns (image[C,H,W] float32, mask[H,W] uint8; 1 = clear-sky)");

  m.def(
      "write_dataset",
      [](const std::filesystem::path& path, const std::vector<py::tuple>& scenes) {
        std::vector<Scene> out;
        out.reserve(scenes.size());
        for (const py::tuple& t : scenes) {
          if (t.size() != 2) throw ShapeError("each scene must be an (image, mask) pair");
          Scene s;
          s.image = image_from_array(t[0].cast<py::array_t<float, py::array::c_style | py::array::forcecast>>());
          s.mask =
              mask_from_array(t[1].cast<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>());
          out.push_back(std::move(s));
        }
        write_dataset(path, out);
      },
      py::arg("path"), py::arg("scenes"));

  m.def(
      "read_dataset",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const Scene& s : read_dataset(path)) {
          out.append(py::make_tuple(image_to_array(s.image), mask_to_array(s.mask)));
        }
        return out;
      },
      py::arg("path"));

  m.def(
      "extract_test_grid",
      [](int height, int width, int patch, int stride) {
        MultiChannelImage img(height, width, 1);
        const TestPatches tp = extract_test_patches(img, patch, stride);
        return tp.grid.origins;
      },
      py::arg("height"), py::arg("width"), py::arg("patch"), py::arg("stride"),
      "Origins of the overlapping test cover for the given extent");

  m.def(
      "reconstruct",
      [](const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& patches,
         const std::vector<std::pair<int, int>>& origins, int patch, int height, int width) {
        PatchGrid grid;
        grid.patch = patch;
        grid.source_h = height;
        grid.source_w = width;
        grid.origins = origins;
        std::vector<FloatImage> prob;
        prob.reserve(patches.size());
        for (const auto& arr : patches) {
          if (arr.ndim() != 2) throw ShapeError("probability patches must be 2-D");
          FloatImage p(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
          std::copy(arr.data(), arr.data() + arr.size(), p.data.begin());
          prob.push_back(std::move(p));
        }
        const FloatImage stitched = reconstruct(prob, grid);
        py::array_t<float> out({stitched.height, stitched.width});
        std::copy(stitched.data.begin(), stitched.data.end(), out.mutable_data());
        return out;
      },
      py::arg("patches"), py::arg("origins"), py::arg("patch"), py::arg("height"), py::arg("width"));

  m.def(
      "pixel_accuracy",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& truth) {
        return pixel_accuracy(mask_from_array(pred), mask_from_array(truth));
      },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "threshold_mask",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& probs, double threshold) {
        if (probs.ndim() != 2) throw ShapeError("probability map must be 2-D");
        FloatImage p(static_cast<int>(probs.shape(0)), static_cast<int>(probs.shape(1)));
        std::copy(probs.data(), probs.data() + probs.size(), p.data.begin());
        return mask_to_array(threshold_mask(p, threshold));
      },
      py::arg("probs"), py::arg("threshold") = 0.5);

  m.def(
      "train_run",
      [](const std::filesystem::path& config) {
        const TrainOutcome o = run_single_train(load_runspec(config));
        py::dict d;
        d["seed"] = o.seed;
        d["epochs_run"] = o.epochs_run;
        d["best_epoch"] = o.best_epoch;
        d["final_train_acc"] = o.final_train_acc;
        d["final_val_acc"] = o.final_val_acc;
        d["metrics"] = o.metrics_path;
        d["checkpoint"] = o.checkpoint_path;
        return d;
      },
      py::arg("config"), "Run one seeded training run described by a config file");

  m.def(
      "evaluate_run",
      [](const std::filesystem::path& config, const std::filesystem::path& checkpoint) {
        const SingleEvalOutcome o = run_single_eval(load_runspec(config), checkpoint);
        py::dict d;
        d["overall_accuracy"] = o.report.overall_accuracy;
        d["mean_scene_accuracy"] = o.report.mean_scene_accuracy;
        d["eval_csv"] = o.eval_csv;
        return d;
      },
      py::arg("config"), py::arg("checkpoint") = std::filesystem::path{});

  m.def(
      "gradcheck",
      [](int seeds) {
        py::list out;
        for (const GradCheckCase& c : run_gradcheck_battery(seeds)) {
          py::dict d;
          d["name"] = c.name;
          d["bits"] = c.bits;
          d["worst"] = c.worst;
          d["tolerance"] = c.tolerance;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 10);

  m.def(
      "aggregate_accuracies",
      [](const std::vector<double>& values) {
        std::vector<RunResult> rows;
        for (size_t i = 0; i < values.size(); ++i) {
          RunResult r;
          r.seed = i;
          r.test_acc = values[i];
          rows.push_back(r);
        }
        const BenchReport rep = aggregate(rows);
        return py::make_tuple(rep.test_acc.mean, rep.test_acc.stddev);
      },
      py::arg("values"), "Mean and sample standard deviation, as the report computes them");

  m.attr("__version__") = "0.1.0";
}
