#include "rhythm/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rhythm {

namespace {

using nlohmann::json;

template <typename T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

const char* dtype_name(SampleType t) {
  switch (t) {
    case SampleType::kU8: return "u8";
    case SampleType::kF32: return "f32";
    case SampleType::kF64: return "f64";
  }
  return "f64";
}

SampleType parse_dtype(const std::string& name) {
  if (name == "u8") return SampleType::kU8;
  if (name == "f32") return SampleType::kF32;
  if (name == "f64") return SampleType::kF64;
  throw std::runtime_error("clip header: unsupported dtype '" + name + "'");
}

std::size_t dtype_size(SampleType t) {
  switch (t) {
    case SampleType::kU8: return 1;
    case SampleType::kF32: return 4;
    case SampleType::kF64: return 8;
  }
  return 8;
}

double interp(double a, double b, double f) { return a + (b - a) * f; }

}  // namespace

void VideoClip::validate() const {
  if (frames.rank() != 4 || frames.dim(0) != 3) {
    throw ShapeError("video clip must be [3, T, H, W], got " + shape_to_string(frames.shape()));
  }
  if (frames.dim(1) < 5) {
    throw ShapeError("video clip needs at least 5 frames, got " + std::to_string(frames.dim(1)));
  }
  if (!(fps > 0.0)) throw std::invalid_argument("video clip fps must be > 0");
}

void BvpSignal::validate() const {
  if (samples.size() < 2) throw std::invalid_argument("BVP signal needs at least 2 samples");
  if (!(fs > 0.0)) throw std::invalid_argument("BVP sampling rate must be > 0");
}

void SyntheticSceneSpec::validate() const {
  auto check_hr = [](double hr) {
    if (!(hr >= 40.0 && hr <= 180.0)) throw std::invalid_argument("synthetic hr_bpm must lie in [40, 180]");
  };
  check_hr(hr_bpm);
  if (hr_end_bpm) check_hr(*hr_end_bpm);
  if (frames < 5 || height < 4 || width < 4) throw std::invalid_argument("synthetic clip too small");
  if (!(fps > 0.0)) throw std::invalid_argument("synthetic fps must be > 0");
  if (pulse_amplitude < 0.0 || noise_sigma < 0.0 || motion_amplitude_px < 0.0) {
    throw std::invalid_argument("synthetic amplitudes must be >= 0");
  }
}

Rect synthetic_skin_box(const SyntheticSceneSpec& spec) {
  const double a = 0.3 * static_cast<double>(spec.width) / std::numbers::sqrt2;
  const double b = 0.4 * static_cast<double>(spec.height) / std::numbers::sqrt2;
  const double cx = 0.5 * static_cast<double>(spec.width);
  const double cy = 0.5 * static_cast<double>(spec.height);
  Rect r;
  r.x = static_cast<std::size_t>(std::ceil(cx - a));
  r.y = static_cast<std::size_t>(std::ceil(cy - b));
  r.width = static_cast<std::size_t>(std::floor(cx + a)) - r.x;
  r.height = static_cast<std::size_t>(std::floor(cy + b)) - r.y;
  return r;
}

std::pair<VideoClip, BvpSignal> generate_synthetic_clip(const SyntheticSceneSpec& spec) {
  spec.validate();
  const std::size_t T = spec.frames, H = spec.height, W = spec.width;
  const double f0 = spec.hr_bpm / 60.0;
  const double f1 = spec.hr_end_bpm.value_or(spec.hr_bpm) / 60.0;
  const double duration = static_cast<double>(T - 1) / spec.fps;

  BvpSignal bvp;
  bvp.fs = spec.fps;
  bvp.samples.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double s = static_cast<double>(t) / spec.fps;
    // Phase of a linearly drifting frequency.
    const double phase = 2.0 * std::numbers::pi * (f0 * s + (f1 - f0) * s * s / (2.0 * duration));
    bvp.samples[t] = std::sin(phase) + 0.3 * std::sin(2.0 * phase + spec.harmonic_phase);
  }

  VideoClip clip;
  clip.fps = spec.fps;
  clip.frames = Tensor({3, T, H, W});
  const double semi_x = 0.3 * static_cast<double>(W);
  const double semi_y = 0.4 * static_cast<double>(H);
  const double cy = 0.5 * static_cast<double>(H);
  for (std::size_t t = 0; t < T; ++t) {
    const double s = static_cast<double>(t) / spec.fps;
    const double cx = 0.5 * static_cast<double>(W) +
                      spec.motion_amplitude_px * std::sin(2.0 * std::numbers::pi * spec.motion_frequency_hz * s);
    for (std::size_t h = 0; h < H; ++h) {
      const double dy = (static_cast<double>(h) + 0.5 - cy) / semi_y;
      for (std::size_t w = 0; w < W; ++w) {
        const double dx = (static_cast<double>(w) + 0.5 - cx) / semi_x;
        const bool skin = dx * dx + dy * dy <= 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          clip.frames.at(c, t, h, w) =
              skin ? spec.skin_color[c] + spec.pulse_amplitude * bvp.samples[t] * spec.channel_weights[c]
                   : spec.background_color[c];
        }
      }
    }
  }
  Rng rng(spec.seed);
  for (auto& v : clip.frames.values()) {
    if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
    v = std::clamp(v, 0.0, 255.0);
  }
  return {std::move(clip), std::move(bvp)};
}

VideoClip crop_window(const VideoClip& clip, const Rect& box, std::size_t out_h, std::size_t out_w) {
  require_rank(clip.frames, 4, "crop_window clip");
  if (box.width == 0 || box.height == 0 || out_h == 0 || out_w == 0) {
    throw std::invalid_argument("crop_window: empty box or output size");
  }
  if (box.x + box.width > clip.width() || box.y + box.height > clip.height()) {
    throw std::out_of_range("crop_window: box exceeds frame bounds");
  }
  const std::size_t C = clip.frames.dim(0), T = clip.frame_count();
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t out, std::size_t extent, std::size_t offset) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(extent) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, extent - 1);
      result[i] = {lo + offset, hi + offset, src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto ys = taps(out_h, box.height, box.y);
  const auto xs = taps(out_w, box.width, box.x);
  VideoClip out;
  out.fps = clip.fps;
  out.frames = Tensor({C, T, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const Tap& ty = ys[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const Tap& tx = xs[j];
          const double top = interp(clip.frames.at(c, t, ty.lo, tx.lo), clip.frames.at(c, t, ty.lo, tx.hi), tx.frac);
          const double bottom =
              interp(clip.frames.at(c, t, ty.hi, tx.lo), clip.frames.at(c, t, ty.hi, tx.hi), tx.frac);
          out.frames.at(c, t, i, j) = interp(top, bottom, ty.frac);
        }
      }
    }
  }
  return out;
}

VideoClip decimate_clip(const VideoClip& clip, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("decimate: factor must be >= 1");
  const std::size_t C = clip.frames.dim(0), T = clip.frame_count(), H = clip.height(), W = clip.width();
  const std::size_t plane = H * W;
  const std::size_t out_t = (T + factor - 1) / factor;
  VideoClip out;
  out.fps = clip.fps / static_cast<double>(factor);
  out.frames = Tensor({C, out_t, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < out_t; ++t) {
      std::copy_n(&clip.frames.at(c, t * factor, 0, 0), plane, &out.frames.at(c, t, 0, 0));
    }
  }
  return out;
}

VideoClip interpolate_clip(const VideoClip& clip, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("interpolate: factor must be >= 1");
  const std::size_t C = clip.frames.dim(0), T = clip.frame_count(), H = clip.height(), W = clip.width();
  const std::size_t plane = H * W;
  const std::size_t out_t = (T - 1) * factor + 1;
  VideoClip out;
  out.fps = clip.fps * static_cast<double>(factor);
  out.frames = Tensor({C, out_t, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < out_t; ++j) {
      const std::size_t t0 = j / factor;
      const double frac = static_cast<double>(j % factor) / static_cast<double>(factor);
      const double* a = &clip.frames.at(c, t0, 0, 0);
      const double* b = frac > 0.0 ? &clip.frames.at(c, t0 + 1, 0, 0) : a;
      double* dst = &out.frames.at(c, j, 0, 0);
      for (std::size_t s = 0; s < plane; ++s) dst[s] = interp(a[s], b[s], frac);
    }
  }
  return out;
}

BvpSignal decimate_bvp(const BvpSignal& bvp, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("decimate: factor must be >= 1");
  BvpSignal out;
  out.fs = bvp.fs / static_cast<double>(factor);
  for (std::size_t i = 0; i < bvp.size(); i += factor) out.samples.push_back(bvp.samples[i]);
  return out;
}

BvpSignal interpolate_bvp(const BvpSignal& bvp, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("interpolate: factor must be >= 1");
  bvp.validate();
  BvpSignal out;
  out.fs = bvp.fs * static_cast<double>(factor);
  const std::size_t n = (bvp.size() - 1) * factor + 1;
  out.samples.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t t0 = j / factor;
    const double frac = static_cast<double>(j % factor) / static_cast<double>(factor);
    out.samples[j] = frac > 0.0 ? interp(bvp.samples[t0], bvp.samples[t0 + 1], frac) : bvp.samples[t0];
  }
  return out;
}

ResampleResult augment_temporal_resample(const VideoClip& clip, const BvpSignal& bvp, double gt_hr_bpm, Rng& rng,
                                         const ResampleConfig& config) {
  if (clip.frame_count() != bvp.size()) {
    throw std::invalid_argument("augment_temporal_resample: clip and BVP lengths differ");
  }
  ResampleResult result{clip, bvp, ResampleKind::kNone, 1, gt_hr_bpm};
  if (gt_hr_bpm > config.down_threshold_bpm && !config.down_factors.empty()) {
    const std::size_t factor = config.down_factors[rng.index(config.down_factors.size())];
    result.clip = decimate_clip(clip, factor);
    result.bvp = decimate_bvp(bvp, factor);
    result.kind = ResampleKind::kDown;
    result.factor = factor;
    result.relabeled_hr_bpm = gt_hr_bpm * static_cast<double>(factor);
  } else if (gt_hr_bpm < config.up_threshold_bpm && !config.up_factors.empty()) {
    const std::size_t factor = config.up_factors[rng.index(config.up_factors.size())];
    result.clip = interpolate_clip(clip, factor);
    result.bvp = interpolate_bvp(bvp, factor);
    result.kind = ResampleKind::kUp;
    result.factor = factor;
    result.relabeled_hr_bpm = gt_hr_bpm / static_cast<double>(factor);
  }
  return result;
}

std::pair<VideoClip, bool> augment_hflip(const VideoClip& clip, Rng& rng, std::optional<bool> force) {
  const bool flip = force.has_value() ? *force : rng.bernoulli(0.5);
  if (!flip) return {clip, false};
  VideoClip out = clip;
  const std::size_t rows = clip.frames.size() / clip.width();
  const std::size_t W = clip.width();
  for (std::size_t r = 0; r < rows; ++r) {
    auto first = out.frames.values().begin() + static_cast<std::ptrdiff_t>(r * W);
    std::reverse(first, first + static_cast<std::ptrdiff_t>(W));
  }
  return {std::move(out), true};
}

std::vector<double> channel_trace(const VideoClip& clip, std::size_t channel, const Rect& roi) {
  if (roi.width == 0 || roi.height == 0) throw std::invalid_argument("roi is empty");
  if (roi.x + roi.width > clip.width() || roi.y + roi.height > clip.height()) {
    throw std::out_of_range("roi exceeds frame bounds");
  }
  if (channel >= clip.frames.dim(0)) throw std::out_of_range("channel index out of range");
  std::vector<double> trace(clip.frame_count());
  const double count = static_cast<double>(roi.width * roi.height);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    double acc = 0.0;
    for (std::size_t h = roi.y; h < roi.y + roi.height; ++h) {
      const double* row = &clip.frames.at(channel, t, h, 0);
      for (std::size_t w = roi.x; w < roi.x + roi.width; ++w) acc += row[w];
    }
    trace[t] = acc / count;
  }
  return trace;
}

void write_clip(const std::filesystem::path& header_path, const VideoClip& clip, SampleType dtype) {
  require_rank(clip.frames, 4, "write_clip");
  auto blob_path = header_path;
  blob_path.replace_extension(".bin");
  json header = {{"format", "rhythm-clip"},
                 {"version", 1},
                 {"shape", clip.frames.shape()},
                 {"layout", "CTHW"},
                 {"fps", clip.fps},
                 {"dtype", dtype_name(dtype)},
                 {"endianness", "little"},
                 {"data", blob_path.filename().string()}};
  {
    std::ofstream out(header_path);
    if (!out) throw std::runtime_error("cannot write " + header_path.string());
    out << header.dump(2) << '\n';
  }
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
  for (double v : clip.frames.values()) {
    switch (dtype) {
      case SampleType::kU8: {
        const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        blob.put(static_cast<char>(b));
        break;
      }
      case SampleType::kF32: {
        const float f = to_little_endian(static_cast<float>(v));
        blob.write(reinterpret_cast<const char*>(&f), sizeof f);
        break;
      }
      case SampleType::kF64: {
        const double d = to_little_endian(v);
        blob.write(reinterpret_cast<const char*>(&d), sizeof d);
        break;
      }
    }
  }
}

VideoClip read_clip(const std::filesystem::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw std::runtime_error("cannot open clip header " + header_path.string());
  json header;
  try {
    in >> header;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed clip header " + header_path.string() + ": " + e.what());
  }
  if (header.value("format", "") != "rhythm-clip") throw std::runtime_error("not a rhythm-clip header");
  if (header.value("endianness", "little") != "little") throw std::runtime_error("only little-endian clips supported");
  if (header.value("layout", "CTHW") != "CTHW") throw std::runtime_error("only CTHW layout supported");
  const Shape shape = header.at("shape").get<Shape>();
  const SampleType dtype = parse_dtype(header.at("dtype").get<std::string>());
  const auto blob_path = header_path.parent_path() / header.at("data").get<std::string>();

  const std::size_t count = shape_numel(shape);
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open clip data " + blob_path.string());
  std::vector<char> raw(count * dtype_size(dtype));
  blob.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(blob.gcount()) != raw.size()) throw std::runtime_error("clip data truncated");

  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (dtype) {
      case SampleType::kU8: values[i] = static_cast<unsigned char>(raw[i]); break;
      case SampleType::kF32: {
        float f;
        std::memcpy(&f, raw.data() + 4 * i, 4);
        values[i] = to_little_endian(f);
        break;
      }
      case SampleType::kF64: {
        double d;
        std::memcpy(&d, raw.data() + 8 * i, 8);
        values[i] = to_little_endian(d);
        break;
      }
    }
  }
  VideoClip clip{Tensor(shape, std::move(values)), header.at("fps").get<double>()};
  clip.validate();
  return clip;
}

void write_bvp_csv(const std::filesystem::path& path, const BvpSignal& bvp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "time_s,value\n";
  char line[96];
  for (std::size_t i = 0; i < bvp.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", static_cast<double>(i) / bvp.fs, bvp.samples[i]);
    out << line;
  }
}

BvpSignal read_bvp_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open BVP file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("BVP file is empty: " + path.string());
  if (line.rfind("time_s", 0) != 0) throw std::runtime_error("BVP file missing 'time_s,value' header");
  std::vector<double> times, values;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed BVP row: " + line);
    try {
      times.push_back(std::stod(line.substr(0, comma)));
      values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error("malformed BVP row: " + line);
    }
  }
  if (values.size() < 2) throw std::runtime_error("BVP file needs at least 2 rows");
  const double span = times.back() - times.front();
  if (!(span > 0.0)) throw std::runtime_error("BVP timestamps must increase");
  // Sampling rates are stored implicitly; snap to 1e-6 Hz to undo decimal rounding.
  const double fs = std::round(static_cast<double>(values.size() - 1) / span * 1e6) / 1e6;
  return BvpSignal{std::move(values), fs};
}

}  // namespace rhythm
