#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "rhythm/losses.hpp"
#include "rhythm/model.hpp"
#include "rhythm/signal.hpp"

namespace py = pybind11;
using namespace rhythm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  return Array(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()), t.values().data());
}

Array to_array(const std::vector<double>& v) {
  return Array(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())}, v.data());
}

BvpSignal to_bvp(const Array& a, double fs) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D signal");
  return {std::vector<double>(a.data(), a.data() + a.size()), fs};
}

VideoClip to_clip(const Array& a, double fps) {
  VideoClip clip{to_tensor(a), fps};
  clip.validate();
  return clip;
}

Rect to_rect(const std::optional<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>>& roi,
             const VideoClip& clip) {
  if (!roi) return {0, 0, clip.width(), clip.height()};
  return {std::get<0>(*roi), std::get<1>(*roi), std::get<2>(*roi), std::get<3>(*roi)};
}

ModelConfig load_config(const std::optional<std::string>& text, std::optional<std::uint64_t> seed) {
  ModelConfig cfg = text ? parse_model_config(*text) : ModelConfig{};
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

py::dict spectrum_dict(const std::vector<double>& freqs, const std::vector<double>& power) {
  py::dict d;
  d["freqs"] = to_array(freqs);
  d["power"] = to_array(power);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the rhythm C++ core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("default_config", [] { return format_model_config(ModelConfig{}); },
        "Canonical INI text of the default model configuration.");

  m.def(
      "synth_clip",
      [](double hr_bpm, std::size_t frames, std::size_t height, std::size_t width, double fps, double noise,
         std::uint64_t seed) {
        SyntheticSceneSpec spec;
        spec.hr_bpm = hr_bpm;
        spec.frames = frames;
        spec.height = height;
        spec.width = width;
        spec.fps = fps;
        spec.noise_sigma = noise;
        spec.seed = seed;
        auto [clip, bvp] = generate_synthetic_clip(spec);
        const Rect box = synthetic_skin_box(spec);
        return py::make_tuple(to_array(clip.frames), to_array(bvp.samples),
                              py::make_tuple(box.x, box.y, box.width, box.height));
      },
      py::arg("hr_bpm") = 72.0, py::arg("frames") = 160, py::arg("height") = 72, py::arg("width") = 72,
      py::arg("fps") = 30.0, py::arg("noise") = 1.0, py::arg("seed") = 0,
      "Synthetic face clip [3, T, H, W], its driving pulse, and the skin box (x, y, w, h).");

  m.def(
      "forward",
      [](const Array& clip, double fps, std::optional<std::string> config, std::optional<std::uint64_t> seed) {
        const ModelConfig cfg = load_config(config, seed);
        const VideoClip c = to_clip(clip, fps);
        BvpSignal out;
        {
          py::gil_scoped_release release;
          out = model_forward(c, cfg, init_weights(cfg));
        }
        return to_array(out.samples);
      },
      py::arg("clip"), py::arg("fps") = 30.0, py::arg("config") = py::none(), py::arg("seed") = py::none(),
      "BVP prediction from randomly initialised weights; H and W must be multiples of 16.");

  m.def(
      "summary",
      [](std::optional<std::string> config, std::size_t frames, std::size_t height, std::size_t width) {
        const ModelSummary s = model_summary(load_config(config, std::nullopt), {frames, height, width});
        py::list rows;
        for (const auto& e : s.breakdown) rows.append(py::make_tuple(e.name, e.parameters, e.macs));
        py::dict d;
        d["parameters"] = s.parameters;
        d["macs"] = s.macs;
        d["breakdown"] = rows;
        return d;
      },
      py::arg("config") = py::none(), py::arg("frames") = 160, py::arg("height") = 128, py::arg("width") = 128);

  m.def(
      "make_region_grid",
      [](std::size_t t, std::size_t h, std::size_t w, std::size_t partition, std::size_t n) {
        const RegionGrid g = make_region_grid({t, h, w}, partition, n);
        py::dict d;
        d["window"] = g.window();
        d["regions"] = g.regions();
        d["region_count"] = g.region_count();
        return d;
      },
      py::arg("t"), py::arg("h"), py::arg("w"), py::arg("partition") = 2, py::arg("n") = 1);

  m.def(
      "topk_route",
      [](const Array& scores, std::size_t k) {
        const RoutingTable r = topk_route(to_tensor(scores), k);
        py::array_t<std::size_t> out({static_cast<py::ssize_t>(r.rows()), static_cast<py::ssize_t>(r.k)});
        std::copy(r.indices.begin(), r.indices.end(), out.mutable_data());
        return out;
      },
      py::arg("scores"), py::arg("k"), "Top-k key regions per query row, highest score first.");

  m.def(
      "loss",
      [](const Array& pred, const Array& gt, double fs, double alpha, double beta, double gamma) {
        const LossComponents c = overall_loss(to_bvp(pred, fs), to_bvp(gt, fs), {alpha, beta, gamma});
        py::dict d;
        d["time"] = c.time;
        d["freq"] = c.freq;
        d["hr"] = c.hr;
        d["total"] = c.total;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("fs") = 30.0, py::arg("alpha") = 0.2, py::arg("beta") = 1.0,
      py::arg("gamma") = 1.0);

  m.def(
      "loss_gradients",
      [](const Array& pred, const Array& gt, double fs, double alpha, double beta) {
        return to_array(loss_gradients(to_bvp(pred, fs), to_bvp(gt, fs), {alpha, beta, 0.0}));
      },
      py::arg("pred"), py::arg("gt"), py::arg("fs") = 30.0, py::arg("alpha") = 0.2, py::arg("beta") = 1.0,
      "Gradient of alpha * time + beta * freq with respect to the prediction.");

  m.def(
      "band_psd",
      [](const Array& x, double fs, double lo, double hi, std::size_t n_fft) {
        const BandPsd p = band_psd(to_bvp(x, fs), lo, hi, n_fft);
        return spectrum_dict(p.freqs, p.power);
      },
      py::arg("x"), py::arg("fs") = 30.0, py::arg("lo") = 0.67, py::arg("hi") = 3.0, py::arg("n_fft") = 0);

  m.def(
      "bandpass",
      [](const Array& x, double fs, double lo, double hi, std::size_t order) {
        return to_array(butterworth_bandpass(to_bvp(x, fs), lo, hi, order).samples);
      },
      py::arg("x"), py::arg("fs") = 30.0, py::arg("lo") = 0.75, py::arg("hi") = 2.5, py::arg("order") = 2,
      "Zero-phase Butterworth band-pass.");

  m.def(
      "welch",
      [](const Array& x, double fs, std::size_t segment_len, double overlap, std::size_t n_fft) {
        const Spectrum s = welch_psd(to_bvp(x, fs), {segment_len, overlap, n_fft});
        return spectrum_dict(s.freqs, s.power);
      },
      py::arg("x"), py::arg("fs") = 30.0, py::arg("segment_len") = 0, py::arg("overlap") = 0.5,
      py::arg("n_fft") = 0);

  m.def(
      "estimate_hr", [](const Array& x, double fs, double lo, double hi) { return estimate_hr(to_bvp(x, fs), lo, hi).bpm; },
      py::arg("x"), py::arg("fs") = 30.0, py::arg("lo") = 0.67, py::arg("hi") = 3.0);

  m.def(
      "hr_metrics",
      [](const std::vector<double>& pred, const std::vector<double>& gt) {
        const HrMetrics h = hr_metrics(pred, gt);
        py::dict d;
        d["mae"] = h.mae;
        d["rmse"] = h.rmse;
        d["mape"] = h.mape;
        d["pearson_rho"] = h.pearson_rho ? py::cast(*h.pearson_rho) : py::none();
        return d;
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "pos",
      [](const Array& clip, double fps, std::optional<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> roi) {
        const VideoClip c = to_clip(clip, fps);
        return to_array(pos_baseline(c, to_rect(roi, c)).samples);
      },
      py::arg("clip"), py::arg("fps") = 30.0, py::arg("roi") = py::none());

  m.def(
      "green",
      [](const Array& clip, double fps, std::optional<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> roi) {
        const VideoClip c = to_clip(clip, fps);
        return to_array(green_baseline(c, to_rect(roi, c)).samples);
      },
      py::arg("clip"), py::arg("fps") = 30.0, py::arg("roi") = py::none());
}
