#include "rhythm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "rhythm/losses.hpp"
#include "rhythm/model.hpp"
#include "rhythm/signal.hpp"

namespace rhythm::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct CliError : std::runtime_error {
  CliError(std::string c, const std::string& message) : std::runtime_error(message), code(std::move(c)) {}
  std::string code;
};

struct Provenance {
  std::string subcommand;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path sidecar_path(const fs::path& file) { return fs::path(file.string() + ".meta.json"); }

void write_sidecar(const fs::path& file, const Provenance& prov) {
  const json meta = {{"file", file.filename().string()},
                     {"subcommand", prov.subcommand},
                     {"config_hash", prov.config_hash},
                     {"seed", prov.seed},
                     {"inputs", prov.inputs}};
  write_text(sidecar_path(file), meta.dump(2) + "\n");
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

Rect parse_rect(const std::string& text) {
  std::array<std::size_t, 4> v{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 4) break;
    std::size_t used = 0;
    v[i++] = std::stoul(item, &used);
    if (used != item.size()) i = 5;
  }
  if (i != 4) throw std::invalid_argument("roi must be x,y,width,height");
  return {v[0], v[1], v[2], v[3]};
}

Rect full_frame(const VideoClip& clip) { return {0, 0, clip.width(), clip.height()}; }

// Explicit --roi, else roi.json next to the clip header, else the whole frame.
Rect resolve_roi(const std::string& roi_arg, const fs::path& clip_path, const VideoClip& clip) {
  if (!roi_arg.empty()) return parse_rect(roi_arg);
  const fs::path side = clip_path.parent_path() / "roi.json";
  if (fs::exists(side)) {
    std::ifstream in(side);
    const json j = json::parse(in);
    return {j.at("x").get<std::size_t>(), j.at("y").get<std::size_t>(), j.at("width").get<std::size_t>(),
            j.at("height").get<std::size_t>()};
  }
  return full_frame(clip);
}

struct ModelBundle {
  ModelConfig cfg;
  ModelWeights weights;
};

ModelBundle load_model(const std::string& config_arg, const std::string& weights_path,
                       std::optional<std::uint64_t> seed) {
  ModelBundle b;
  if (config_arg != "default") b.cfg = read_model_config(config_arg);
  if (seed) b.cfg.seed = *seed;
  b.cfg.validate();
  b.weights = weights_path.empty() ? init_weights(b.cfg) : read_checkpoint(weights_path, b.cfg);
  return b;
}

// Frames whose sides are not multiples of 16 are resampled down to the nearest multiple.
VideoClip fit_to_model(const VideoClip& clip) {
  const std::size_t h = clip.height() / 16 * 16, w = clip.width() / 16 * 16;
  if (h == 0 || w == 0) throw ShapeError("clip frames are smaller than 16x16");
  if (h == clip.height() && w == clip.width()) return clip;
  return crop_window(clip, full_frame(clip), h, w);
}

std::string scene_text(const SyntheticSceneSpec& s) {
  std::ostringstream os;
  os << "frames=" << s.frames << "\nheight=" << s.height << "\nwidth=" << s.width << "\nfps=" << fmt(s.fps)
     << "\nhr_bpm=" << fmt(s.hr_bpm) << "\nhr_end_bpm=" << (s.hr_end_bpm ? fmt(*s.hr_end_bpm) : "none")
     << "\npulse_amplitude=" << fmt(s.pulse_amplitude) << "\nchannel_weights=" << fmt(s.channel_weights[0]) << ","
     << fmt(s.channel_weights[1]) << "," << fmt(s.channel_weights[2]) << "\nnoise_sigma=" << fmt(s.noise_sigma)
     << "\nmotion_amplitude_px=" << fmt(s.motion_amplitude_px) << "\nmotion_frequency_hz="
     << fmt(s.motion_frequency_hz) << "\nseed=" << s.seed << "\n";
  return os.str();
}

json hr_json(const HrEstimate& e) { return {{"hr_bpm", e.bpm}, {"peak_hz", e.peak_hz}}; }

struct ClipResult {
  std::string name;
  double pred_hr = 0.0;
  double gt_hr = 0.0;
  double snr_db = 0.0;
  bool snr_clamped = false;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first failure by index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct SynthArgs {
  SyntheticSceneSpec spec;
  std::optional<double> hr_end;
  std::string dtype = "f32";
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticSceneSpec spec = a.spec;
  spec.hr_end_bpm = a.hr_end;
  spec.validate();
  const auto [clip, bvp] = generate_synthetic_clip(spec);
  const Rect roi = synthetic_skin_box(spec);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const SampleType dtype = a.dtype == "u8" ? SampleType::kU8 : a.dtype == "f64" ? SampleType::kF64 : SampleType::kF32;
  const Provenance prov{"synth", text_hash(scene_text(spec)), spec.seed, {}};

  write_clip(dir / "clip.json", clip, dtype);
  write_bvp_csv(dir / "bvp.csv", bvp);
  const json roi_json = {{"x", roi.x}, {"y", roi.y}, {"width", roi.width}, {"height", roi.height}};
  write_text(dir / "roi.json", roi_json.dump(2) + "\n");
  for (const char* name : {"clip.json", "clip.bin", "bvp.csv", "roi.json"}) write_sidecar(dir / name, prov);

  out << json{{"clip", (dir / "clip.json").string()},
              {"bvp", (dir / "bvp.csv").string()},
              {"roi", roi_json},
              {"frames", spec.frames},
              {"fps", spec.fps},
              {"hr_bpm", spec.hr_bpm}}
             .dump(2)
      << "\n";
  return 0;
}

struct ModelArgs {
  std::string config = "default";
  std::string weights;
  std::optional<std::uint64_t> seed;
};

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--config", m.config, "Model config file, or 'default'");
  app->add_option("--weights", m.weights, "Checkpoint manifest; random init when omitted")->check(CLI::ExistingFile);
  app->add_option("--seed", m.seed, "Initialisation seed (overrides the config)");
}

struct ForwardArgs {
  ModelArgs model;
  std::string clip;
  std::string out;
  std::string save_weights;
};

int cmd_forward(const ForwardArgs& a, std::ostream& out) {
  const ModelBundle m = load_model(a.model.config, a.model.weights, a.model.seed);
  const VideoClip raw = read_clip(a.clip);
  const VideoClip clip = fit_to_model(raw);
  const BvpSignal bvp = model_forward(clip, m.cfg, m.weights);

  const Provenance prov{"forward", config_hash(m.cfg), m.cfg.seed, {a.clip}};
  const fs::path out_path(a.out);
  ensure_parent(out_path);
  write_bvp_csv(out_path, bvp);
  write_sidecar(out_path, prov);
  if (!a.save_weights.empty()) {
    const fs::path wp(a.save_weights);
    ensure_parent(wp);
    write_checkpoint(wp, m.weights, m.cfg);
    write_sidecar(wp, prov);
    auto blob = wp;
    write_sidecar(blob.replace_extension(".bin"), prov);
  }
  out << json{{"out", a.out},
              {"samples", bvp.size()},
              {"fs", bvp.fs},
              {"input_hw", {raw.height(), raw.width()}},
              {"model_hw", {clip.height(), clip.width()}}}
             .dump(2)
      << "\n";
  return 0;
}

struct LossArgs {
  std::string pred;
  std::string gt;
  LossWeights weights;
  LossOptions options;
  std::string out;
  std::string grad_out;
};

int cmd_loss(const LossArgs& a, std::ostream& out) {
  const BvpSignal pred = read_bvp_csv(a.pred);
  const BvpSignal gt = read_bvp_csv(a.gt);
  const LossComponents c = overall_loss(pred, gt, a.weights, a.options);
  const json j = {{"time", c.time},
                  {"freq", c.freq},
                  {"hr", c.hr},
                  {"total", c.total},
                  {"pred_constant", c.pred_constant},
                  {"weights", {{"alpha", a.weights.alpha}, {"beta", a.weights.beta}, {"gamma", a.weights.gamma}}}};
  const Provenance prov{"loss", "", 0, {a.pred, a.gt}};
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_text(a.out, j.dump(2) + "\n");
    write_sidecar(a.out, prov);
  }
  if (!a.grad_out.empty()) {
    const std::vector<double> g = loss_gradients(pred, gt, a.weights, a.options);
    std::string csv = "index,gradient\n";
    for (std::size_t i = 0; i < g.size(); ++i) csv += std::to_string(i) + "," + fmt(g[i]) + "\n";
    ensure_parent(a.grad_out);
    write_text(a.grad_out, csv);
    write_sidecar(a.grad_out, prov);
  }
  out << j.dump(2) << "\n";
  return 0;
}

struct HrArgs {
  std::string bvp;
  bool no_filter = false;
  double filter_lo = 0.75;
  double filter_hi = 2.5;
  double band_lo = 0.67;
  double band_hi = 3.0;
  std::optional<double> gt_hr;
  std::string psd_out;
  std::string out;
};

int cmd_hr(const HrArgs& a, std::ostream& out) {
  BvpSignal x = read_bvp_csv(a.bvp);
  if (!a.no_filter) x = butterworth_bandpass(x, a.filter_lo, a.filter_hi);
  const HrEstimate est = estimate_hr(x, a.band_lo, a.band_hi);
  json j = hr_json(est);
  j["filtered"] = !a.no_filter;
  if (a.gt_hr) {
    const SnrResult snr = snr_metric(x, *a.gt_hr);
    j["snr_db"] = snr.db;
    j["snr_clamped"] = snr.clamped;
  }
  const Provenance prov{"hr", "", 0, {a.bvp}};
  if (!a.psd_out.empty()) {
    std::string csv = "freq_hz,power\n";
    for (std::size_t k = 0; k < est.band.freqs.size(); ++k) {
      csv += fmt(est.band.freqs[k]) + "," + fmt(est.band.power[k]) + "\n";
    }
    ensure_parent(a.psd_out);
    write_text(a.psd_out, csv);
    write_sidecar(a.psd_out, prov);
  }
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_text(a.out, j.dump(2) + "\n");
    write_sidecar(a.out, prov);
  }
  out << j.dump(2) << "\n";
  return 0;
}

struct BaselineArgs {
  std::string method = "pos";
  std::string clip;
  std::string roi;
  std::string out;
};

BvpSignal run_baseline(const std::string& method, const VideoClip& clip, const Rect& roi) {
  if (method == "pos") return pos_baseline(clip, roi);
  if (method == "green") return green_baseline(clip, roi);
  throw std::invalid_argument("unknown baseline method '" + method + "'");
}

int cmd_baseline(const BaselineArgs& a, std::ostream& out) {
  const VideoClip clip = read_clip(a.clip);
  const Rect roi = resolve_roi(a.roi, a.clip, clip);
  const BvpSignal bvp = run_baseline(a.method, clip, roi);
  const fs::path out_path(a.out);
  ensure_parent(out_path);
  write_bvp_csv(out_path, bvp);
  write_sidecar(out_path, {"baseline:" + a.method, "", 0, {a.clip}});
  json j = hr_json(estimate_hr(bvp));
  j["method"] = a.method;
  j["out"] = a.out;
  out << j.dump(2) << "\n";
  return 0;
}

struct EvalArgs {
  ModelArgs model;
  std::vector<std::string> clips;
  std::string method = "model";
  std::size_t jobs = 1;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::optional<ModelBundle> m;
  if (a.method == "model") m = load_model(a.model.config, a.model.weights, a.model.seed);
  else if (a.method != "pos" && a.method != "green") throw std::invalid_argument("unknown eval method '" + a.method + "'");

  std::vector<ClipResult> results(a.clips.size());
  parallel_for(a.clips.size(), a.jobs, [&](std::size_t i) {
    const fs::path dir(a.clips[i]);
    const fs::path header = dir / "clip.json";
    const VideoClip clip = read_clip(header);
    const BvpSignal gt = read_bvp_csv(dir / "bvp.csv");
    BvpSignal pred = m ? butterworth_bandpass(model_forward(fit_to_model(clip), m->cfg, m->weights))
                       : run_baseline(a.method, clip, resolve_roi("", header, clip));
    ClipResult& r = results[i];
    r.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    r.gt_hr = estimate_hr(gt).bpm;
    r.pred_hr = estimate_hr(pred).bpm;
    const SnrResult snr = snr_metric(pred, r.gt_hr);
    r.snr_db = snr.db;
    r.snr_clamped = snr.clamped;
  });

  std::vector<double> pred_hr, gt_hr;
  double snr_sum = 0.0;
  for (const auto& r : results) {
    pred_hr.push_back(r.pred_hr);
    gt_hr.push_back(r.gt_hr);
    snr_sum += r.snr_db;
  }
  HrMetrics metrics = hr_metrics(pred_hr, gt_hr);
  metrics.snr_db = snr_sum / static_cast<double>(results.size());

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const Provenance prov{"eval:" + a.method, m ? config_hash(m->cfg) : "", m ? m->cfg.seed : 0, a.clips};

  std::string per_clip = "clip,pred_hr_bpm,gt_hr_bpm,snr_db,snr_clamped\n";
  for (const auto& r : results) {
    per_clip += r.name + "," + fmt(r.pred_hr) + "," + fmt(r.gt_hr) + "," + fmt(r.snr_db) + "," +
                (r.snr_clamped ? "1" : "0") + "\n";
  }
  write_text(dir / "per_clip.csv", per_clip);

  std::string ba = "clip,mean_bpm,difference_bpm\n";
  const auto rows = bland_altman(pred_hr, gt_hr);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ba += results[i].name + "," + fmt(rows[i].mean) + "," + fmt(rows[i].difference) + "\n";
  }
  write_text(dir / "bland_altman.csv", ba);

  json j = {{"method", a.method},
            {"clips", results.size()},
            {"mae", metrics.mae},
            {"rmse", metrics.rmse},
            {"mape", metrics.mape},
            {"pearson_rho", metrics.pearson_rho ? json(*metrics.pearson_rho) : json(nullptr)},
            {"snr_db", *metrics.snr_db}};
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  for (const char* name : {"per_clip.csv", "bland_altman.csv", "metrics.json"}) write_sidecar(dir / name, prov);
  out << j.dump(2) << "\n";
  return 0;
}

struct AttnArgs {
  ModelArgs model;
  std::string clip;
  std::size_t stage = 0;
  std::size_t query = 0;
  std::string out;
};

int cmd_attn_dump(const AttnArgs& a, std::ostream& out) {
  const ModelBundle m = load_model(a.model.config, a.model.weights, a.model.seed);
  const VideoClip clip = fit_to_model(read_clip(a.clip));
  if (a.stage >= m.cfg.stages.size()) {
    throw CliError("invalid_stage", "stage " + std::to_string(a.stage) + " does not exist (model has " +
                                        std::to_string(m.cfg.stages.size()) + ")");
  }
  const std::size_t n = m.cfg.stages[a.stage];
  const std::size_t tokens = (clip.frame_count() >> n) * (clip.height() / 16) * (clip.width() / 16);
  if (a.query >= tokens) {
    throw CliError("invalid_query",
                   "query token " + std::to_string(a.query) + " out of range for " + std::to_string(tokens) + " tokens");
  }

  ForwardTrace trace;
  trace.stage = a.stage;
  trace.attention.query_token = a.query;
  model_forward(clip, m.cfg, m.weights, &trace);
  const AttentionTrace& t = trace.attention;

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const Provenance prov{"attn-dump", config_hash(m.cfg), m.cfg.seed, {a.clip}};

  const std::size_t R = t.grid.region_count();
  std::string scores = "query_region,key_region,score\n";
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < R; ++j) {
      scores += std::to_string(i) + "," + std::to_string(j) + "," + fmt(t.scores[i * R + j]) + "\n";
    }
  }
  write_text(dir / "scores.csv", scores);

  std::string routing = "query_region,rank,key_region\n";
  for (std::size_t r = 0; r < t.routes.rows(); ++r) {
    const auto row = t.routes.row(r);
    for (std::size_t k = 0; k < row.size(); ++k) {
      routing += std::to_string(r) + "," + std::to_string(k) + "," + std::to_string(row[k]) + "\n";
    }
  }
  write_text(dir / "routing.csv", routing);

  std::string refined = "head,key_token,weight\n";
  for (std::size_t h = 0; h < t.head_probes.size(); ++h) {
    const AttentionProbe& p = t.head_probes[h];
    for (std::size_t i = 0; i < p.key_tokens.size(); ++i) {
      refined += std::to_string(h) + "," + std::to_string(p.key_tokens[i]) + "," + fmt(p.weights[i]) + "\n";
    }
  }
  write_text(dir / "refined.csv", refined);

  const json j = {{"stage", a.stage},
                  {"sampling", n},
                  {"query_token", a.query},
                  {"query_region", t.grid.region_of(a.query)},
                  {"tokens", t.grid.tokens()},
                  {"window", t.grid.window()},
                  {"regions", t.grid.regions()},
                  {"topk", t.routes.k},
                  {"heads", t.head_probes.size()}};
  write_text(dir / "attention.json", j.dump(2) + "\n");
  for (const char* name : {"scores.csv", "routing.csv", "refined.csv", "attention.json"}) {
    write_sidecar(dir / name, prov);
  }
  out << j.dump(2) << "\n";
  return 0;
}

struct SummaryArgs {
  ModelArgs model;
  std::size_t frames = 160;
  std::size_t height = 128;
  std::size_t width = 128;
  std::string out;
};

int cmd_summary(const SummaryArgs& a, std::ostream& out) {
  ModelConfig cfg;
  if (a.model.config != "default") cfg = read_model_config(a.model.config);
  if (a.model.seed) cfg.seed = *a.model.seed;
  const ModelSummary s = model_summary(cfg, {a.frames, a.height, a.width});
  json breakdown = json::array();
  for (const auto& e : s.breakdown) {
    breakdown.push_back({{"name", e.name}, {"parameters", e.parameters}, {"macs", e.macs}});
  }
  const json j = {{"parameters", s.parameters},
                  {"macs", s.macs},
                  {"input", {a.frames, a.height, a.width}},
                  {"config_hash", config_hash(cfg)},
                  {"breakdown", breakdown}};
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_text(a.out, j.dump(2) + "\n");
    write_sidecar(a.out, {"summary", config_hash(cfg), cfg.seed, {}});
  }
  out << j.dump(2) << "\n";
  return 0;
}

void report(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Remote photoplethysmography toolkit", "rhythm"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic video clip with a known pulse");
  s->add_option("--hr", synth.spec.hr_bpm, "Heart rate in bpm")->capture_default_str();
  s->add_option("--hr-end", synth.hr_end, "Heart rate at the last frame (linear drift)");
  s->add_option("--frames", synth.spec.frames)->capture_default_str();
  s->add_option("--height", synth.spec.height)->capture_default_str();
  s->add_option("--width", synth.spec.width)->capture_default_str();
  s->add_option("--fps", synth.spec.fps)->capture_default_str();
  s->add_option("--amplitude", synth.spec.pulse_amplitude, "Pulse amplitude in intensity units")->capture_default_str();
  s->add_option("--weights", synth.spec.channel_weights, "Per-channel pulse weights R G B")->expected(3);
  s->add_option("--noise", synth.spec.noise_sigma, "Gaussian pixel noise sigma")->capture_default_str();
  s->add_option("--motion", synth.spec.motion_amplitude_px, "Horizontal sway amplitude in pixels");
  s->add_option("--seed", synth.spec.seed)->capture_default_str();
  s->add_option("--dtype", synth.dtype, "Clip sample type")->check(CLI::IsMember({"u8", "f32", "f64"}));
  s->add_option("--out", synth.out, "Output directory")->required();

  ForwardArgs fwd;
  auto* f = app.add_subcommand("forward", "Predict a BVP signal from a clip");
  add_model_options(f, fwd.model);
  f->add_option("--clip", fwd.clip, "Clip header (.json)")->required()->check(CLI::ExistingFile);
  f->add_option("--out", fwd.out, "Output BVP CSV")->required();
  f->add_option("--save-weights", fwd.save_weights, "Also write the weights used as a checkpoint");

  LossArgs loss;
  auto* l = app.add_subcommand("loss", "Evaluate the training losses for a prediction");
  l->add_option("--pred", loss.pred)->required()->check(CLI::ExistingFile);
  l->add_option("--gt", loss.gt)->required()->check(CLI::ExistingFile);
  l->add_option("--alpha", loss.weights.alpha)->capture_default_str();
  l->add_option("--beta", loss.weights.beta)->capture_default_str();
  l->add_option("--gamma", loss.weights.gamma)->capture_default_str();
  l->add_option("--nfft", loss.options.n_fft, "Spectrum length; 0 picks a default");
  l->add_option("--sigma", loss.options.sigma_bpm, "HR distribution width in bpm")->capture_default_str();
  l->add_option("--out", loss.out, "Also write the JSON result here");
  l->add_option("--grad-out", loss.grad_out, "Write d(alpha*time + beta*freq)/d pred as CSV");

  HrArgs hr;
  auto* h = app.add_subcommand("hr", "Estimate heart rate from a BVP CSV");
  h->add_option("--bvp", hr.bvp)->required()->check(CLI::ExistingFile);
  h->add_flag("--no-filter", hr.no_filter, "Skip the band-pass filter");
  h->add_option("--filter-lo", hr.filter_lo)->capture_default_str();
  h->add_option("--filter-hi", hr.filter_hi)->capture_default_str();
  h->add_option("--band-lo", hr.band_lo, "HR search band lower edge (Hz)")->capture_default_str();
  h->add_option("--band-hi", hr.band_hi, "HR search band upper edge (Hz)")->capture_default_str();
  h->add_option("--gt-hr", hr.gt_hr, "Reference HR for the SNR");
  h->add_option("--psd-out", hr.psd_out, "Write the in-band PSD as CSV");
  h->add_option("--out", hr.out, "Also write the JSON result here");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate HR error over synthetic clip directories");
  add_model_options(e, ev.model);
  e->add_option("clips", ev.clips, "Directories holding clip.json and bvp.csv")->required()->check(CLI::ExistingDirectory);
  e->add_option("--method", ev.method)->check(CLI::IsMember({"model", "pos", "green"}))->capture_default_str();
  e->add_option("--jobs", ev.jobs, "Clips processed in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();

  BaselineArgs base;
  auto* b = app.add_subcommand("baseline", "Run a classical pulse extractor");
  b->add_option("--method", base.method)->check(CLI::IsMember({"pos", "green"}))->capture_default_str();
  b->add_option("--clip", base.clip)->required()->check(CLI::ExistingFile);
  b->add_option("--roi", base.roi, "x,y,width,height; defaults to roi.json beside the clip, else the full frame");
  b->add_option("--out", base.out, "Output BVP CSV")->required();

  AttnArgs attn;
  auto* at = app.add_subcommand("attn-dump", "Export attention scores, routing and refined weights of one stage");
  add_model_options(at, attn.model);
  at->add_option("--clip", attn.clip)->required()->check(CLI::ExistingFile);
  at->add_option("--stage", attn.stage)->capture_default_str();
  at->add_option("--query", attn.query, "Query token index")->capture_default_str();
  at->add_option("--out", attn.out, "Output directory")->required();

  SummaryArgs sum;
  auto* su = app.add_subcommand("summary", "Parameter and MAC counts");
  add_model_options(su, sum.model);
  su->add_option("--frames", sum.frames)->capture_default_str();
  su->add_option("--height", sum.height)->capture_default_str();
  su->add_option("--width", sum.width)->capture_default_str();
  su->add_option("--out", sum.out, "Also write the JSON result here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    report(err, "usage", ex.what());
    return 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (f->parsed()) return cmd_forward(fwd, out);
    if (l->parsed()) return cmd_loss(loss, out);
    if (h->parsed()) return cmd_hr(hr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (b->parsed()) return cmd_baseline(base, out);
    if (at->parsed()) return cmd_attn_dump(attn, out);
    if (su->parsed()) return cmd_summary(sum, out);
  } catch (const CliError& ex) {
    report(err, ex.code, ex.what());
    return 3;
  } catch (const ShapeError& ex) {
    report(err, "shape_error", ex.what());
    return 3;
  } catch (const std::out_of_range& ex) {
    report(err, "out_of_range", ex.what());
    return 3;
  } catch (const std::invalid_argument& ex) {
    report(err, "invalid_argument", ex.what());
    return 3;
  } catch (const std::exception& ex) {
    report(err, "runtime_error", ex.what());
    return 4;
  }
  report(err, "usage", "no subcommand given");
  return 2;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace rhythm::cli
