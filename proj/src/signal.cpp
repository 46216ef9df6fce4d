#include "rhythm/signal.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

namespace rhythm {

namespace {

using cplx = std::complex<double>;

// Coefficients of prod (x - r_i), highest power first.
std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
  std::vector<cplx> c{1.0};
  for (const cplx& r : roots) {
    c.push_back(0.0);
    for (std::size_t i = c.size() - 1; i > 0; --i) c[i] -= r * c[i - 1];
  }
  return c;
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double population_std(std::span<const double> x) {
  const double m = mean_of(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

std::vector<double> check_pair(std::span<const double> pred, std::span<const double> gt, const char* who) {
  if (pred.size() != gt.size()) throw std::invalid_argument(std::string(who) + ": series lengths differ");
  if (pred.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 entries");
  std::vector<double> diff(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) diff[i] = pred[i] - gt[i];
  return diff;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

BvpSignal finish_baseline(std::vector<double> raw, double fps, const BaselineOptions& opts) {
  BvpSignal out{detrend_linear(raw), fps};
  return butterworth_bandpass(out, opts.f_lo, opts.f_hi);
}

}  // namespace

void FilterSpec::validate() const {
  if (order == 0) throw std::invalid_argument("filter order must be >= 1");
  if (!(fs > 0.0)) throw std::invalid_argument("filter sampling rate must be > 0");
  if (!(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0)) {
    throw std::invalid_argument("filter band must satisfy 0 < f_lo < f_hi < fs/2");
  }
}

FilterCoefficients design_butterworth_bandpass(const FilterSpec& spec) {
  spec.validate();
  const std::size_t N = spec.order;

  // Analog low-pass prototype poles on the left half of the unit circle.
  std::vector<cplx> proto;
  for (std::size_t i = 0; i < N; ++i) {
    const double m = -static_cast<double>(N) + 1.0 + 2.0 * static_cast<double>(i);
    proto.push_back(-std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * static_cast<double>(N)))));
  }

  // Prewarp the edges for a bilinear transform with sampling rate fs = 2 on normalized frequencies.
  const double fs2 = 4.0;
  const double w1 = fs2 * std::tan(std::numbers::pi * spec.f_lo / spec.fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * spec.f_hi / spec.fs);
  const double bw = w2 - w1;
  const double wo = std::sqrt(w1 * w2);

  std::vector<cplx> poles;
  for (const cplx& p : proto) {
    const cplx lp = p * bw / 2.0;
    const cplx root = std::sqrt(lp * lp - wo * wo);
    poles.push_back(lp + root);
    poles.push_back(lp - root);
  }
  std::vector<cplx> zeros(N, 0.0);
  double gain = std::pow(bw, static_cast<double>(N));

  // Bilinear transform; the N zeros at infinity land on z = -1.
  cplx num = 1.0, den = 1.0;
  for (const cplx& z : zeros) num *= fs2 - z;
  for (const cplx& p : poles) den *= fs2 - p;
  gain *= (num / den).real();
  std::vector<cplx> zd, pd;
  for (const cplx& z : zeros) zd.push_back((fs2 + z) / (fs2 - z));
  for (std::size_t i = 0; i < N; ++i) zd.push_back(-1.0);
  for (const cplx& p : poles) pd.push_back((fs2 + p) / (fs2 - p));

  FilterCoefficients c;
  for (const cplx& v : poly_from_roots(zd)) c.b.push_back(gain * v.real());
  for (const cplx& v : poly_from_roots(pd)) c.a.push_back(v.real());
  return c;
}

std::vector<double> lfilter(const FilterCoefficients& c, std::span<const double> x, std::span<const double> zi) {
  if (c.a.empty() || c.a[0] == 0.0) throw std::invalid_argument("lfilter: a[0] must be nonzero");
  const std::size_t n = std::max(c.a.size(), c.b.size());
  std::vector<double> b(n, 0.0), a(n, 0.0);
  for (std::size_t i = 0; i < c.b.size(); ++i) b[i] = c.b[i] / c.a[0];
  for (std::size_t i = 0; i < c.a.size(); ++i) a[i] = c.a[i] / c.a[0];

  std::vector<double> z(n - 1, 0.0);
  if (!zi.empty()) {
    if (zi.size() != n - 1) throw std::invalid_argument("lfilter: zi has the wrong length");
    std::copy(zi.begin(), zi.end(), z.begin());
  }
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double out = b[0] * x[t] + (n > 1 ? z[0] : 0.0);
    for (std::size_t i = 0; i + 1 < n - 1; ++i) z[i] = b[i + 1] * x[t] + z[i + 1] - a[i + 1] * out;
    if (n > 1) z[n - 2] = b[n - 1] * x[t] - a[n - 1] * out;
    y[t] = out;
  }
  return y;
}

std::vector<double> lfilter_zi(const FilterCoefficients& c) {
  const std::size_t n = std::max(c.a.size(), c.b.size());
  if (n < 2) return {};
  std::vector<double> b(n, 0.0), a(n, 0.0);
  for (std::size_t i = 0; i < c.b.size(); ++i) b[i] = c.b[i] / c.a[0];
  for (std::size_t i = 0; i < c.a.size(); ++i) a[i] = c.a[i] / c.a[0];

  const auto m = static_cast<Eigen::Index>(n - 1);
  // (I - A^T) zi = b[1:] - a[1:] b[0], with A the companion matrix of a.
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    lhs(i, 0) += a[static_cast<std::size_t>(i) + 1];
    if (i + 1 < m) lhs(i, i + 1) -= 1.0;
    rhs(i) = b[static_cast<std::size_t>(i) + 1] - a[static_cast<std::size_t>(i) + 1] * b[0];
  }
  const Eigen::VectorXd zi = lhs.fullPivLu().solve(rhs);
  return {zi.data(), zi.data() + m};
}

std::vector<double> filtfilt(const FilterCoefficients& c, std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("filtfilt: need at least 2 samples");
  const std::size_t pad = std::min(3 * std::max(c.a.size(), c.b.size()), x.size() - 1);
  const std::size_t n = x.size();

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const std::vector<double> zi = lfilter_zi(c);
  std::vector<double> z(zi.size());
  for (std::size_t i = 0; i < zi.size(); ++i) z[i] = zi[i] * ext.front();
  std::vector<double> y = lfilter(c, ext, z);

  std::reverse(y.begin(), y.end());
  for (std::size_t i = 0; i < zi.size(); ++i) z[i] = zi[i] * y.front();
  y = lfilter(c, y, z);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

BvpSignal butterworth_bandpass(const BvpSignal& x, double f_lo, double f_hi, std::size_t order) {
  x.validate();
  const FilterSpec spec{order, f_lo, f_hi, x.fs};
  spec.validate();
  if (x.size() <= 3 * order) throw std::invalid_argument("butterworth_bandpass: signal too short for the filter order");
  return {filtfilt(design_butterworth_bandpass(spec), x.samples), x.fs};
}

Spectrum welch_psd(const BvpSignal& x, const WelchSpec& spec) {
  x.validate();
  const std::size_t N = x.size();
  const std::size_t seg =
      spec.segment_len ? spec.segment_len : std::min(N, static_cast<std::size_t>(std::llround(10.0 * x.fs)));
  if (seg < 2) throw std::invalid_argument("welch_psd: segment must hold at least 2 samples");
  if (N < seg) throw std::invalid_argument("welch_psd: signal shorter than one segment");
  if (!(spec.overlap >= 0.0 && spec.overlap < 1.0)) throw std::invalid_argument("welch_psd: overlap must lie in [0, 1)");
  const std::size_t n_fft = spec.n_fft ? spec.n_fft : std::max<std::size_t>(2048, std::bit_ceil(seg));
  if (n_fft < seg) throw std::invalid_argument("welch_psd: n_fft smaller than the segment");

  const auto noverlap = static_cast<std::size_t>(std::floor(spec.overlap * static_cast<double>(seg)));
  const std::size_t step = seg - noverlap;
  const std::size_t segments = (N - noverlap) / step;

  const std::vector<double> w = hann_periodic(seg);
  const double w_power = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
  const double scale = 1.0 / (x.fs * w_power);
  const std::size_t bins = n_fft / 2 + 1;

  Eigen::FFT<double> fft;
  std::vector<double> frame(n_fft);
  std::vector<cplx> spectrum;
  Spectrum out;
  out.power.assign(bins, 0.0);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::span<const double> part(x.samples.data() + s * step, seg);
    const double m = mean_of(part);
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = 0; i < seg; ++i) frame[i] = (part[i] - m) * w[i];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < bins; ++k) out.power[k] += std::norm(spectrum[k]) * scale;
  }
  for (std::size_t k = 0; k < bins; ++k) {
    out.power[k] /= static_cast<double>(segments);
    const bool unpaired = k == 0 || (n_fft % 2 == 0 && k == n_fft / 2);
    if (!unpaired) out.power[k] *= 2.0;
  }
  out.freqs.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) out.freqs[k] = static_cast<double>(k) * x.fs / static_cast<double>(n_fft);
  return out;
}

HrEstimate estimate_hr(const BvpSignal& x, double f_lo, double f_hi, const WelchSpec& spec) {
  if (!(f_lo >= 0.0 && f_hi > f_lo)) throw std::invalid_argument("estimate_hr: invalid band");
  const Spectrum psd = welch_psd(x, spec);
  HrEstimate est;
  for (std::size_t k = 0; k < psd.freqs.size(); ++k) {
    if (psd.freqs[k] >= f_lo && psd.freqs[k] <= f_hi) {
      est.band.freqs.push_back(psd.freqs[k]);
      est.band.power.push_back(psd.power[k]);
    }
  }
  if (est.band.freqs.empty()) throw std::invalid_argument("estimate_hr: band contains no frequency bins");
  const auto peak = std::max_element(est.band.power.begin(), est.band.power.end()) - est.band.power.begin();
  est.peak_hz = est.band.freqs[static_cast<std::size_t>(peak)];
  est.bpm = 60.0 * est.peak_hz;
  return est;
}

SnrResult snr_metric(const BvpSignal& x, double gt_hr_bpm, const SnrOptions& opts) {
  x.validate();
  const double f0 = gt_hr_bpm / 60.0;
  if (!(f0 >= opts.noise_lo_hz && f0 <= opts.noise_hi_hz)) {
    throw std::invalid_argument("snr_metric: ground-truth HR outside the noise band");
  }
  const std::size_t N = x.size();
  const double m = mean_of(x.samples);
  std::vector<double> frame(N);
  for (std::size_t i = 0; i < N; ++i) frame[i] = x.samples[i] - m;
  Eigen::FFT<double> fft;
  std::vector<cplx> spectrum;
  fft.fwd(spectrum, frame);

  constexpr double kTol = 1e-9;
  double signal = 0.0, noise = 0.0;
  for (std::size_t k = 0; k <= N / 2; ++k) {
    const double f = static_cast<double>(k) * x.fs / static_cast<double>(N);
    if (f < opts.noise_lo_hz - kTol || f > opts.noise_hi_hz + kTol) continue;
    const double p = std::norm(spectrum[k]);
    const bool near_hr = std::abs(f - f0) <= opts.half_width_hz + kTol ||
                         std::abs(f - 2.0 * f0) <= opts.half_width_hz + kTol;
    (near_hr ? signal : noise) += p;
  }
  if (signal == 0.0 && noise == 0.0) throw std::invalid_argument("snr_metric: no power in the noise band");
  if (noise == 0.0) return {opts.clamp_db, true};
  if (signal == 0.0) return {-opts.clamp_db, true};
  const double db = 10.0 * std::log10(signal / noise);
  if (db > opts.clamp_db) return {opts.clamp_db, true};
  if (db < -opts.clamp_db) return {-opts.clamp_db, true};
  return {db, false};
}

HrMetrics hr_metrics(std::span<const double> pred_bpm, std::span<const double> gt_bpm) {
  const std::vector<double> diff = check_pair(pred_bpm, gt_bpm, "hr_metrics");
  HrMetrics m;
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    if (gt_bpm[i] == 0.0) throw std::invalid_argument("hr_metrics: zero ground-truth HR makes MAPE undefined");
    abs_sum += std::abs(diff[i]);
    sq_sum += diff[i] * diff[i];
    pct_sum += std::abs(diff[i]) / std::abs(gt_bpm[i]);
  }
  const auto n = static_cast<double>(diff.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = 100.0 * pct_sum / n;
  m.pearson_rho = pearson(pred_bpm, gt_bpm);
  return m;
}

std::vector<BlandAltmanPoint> bland_altman(std::span<const double> pred_bpm, std::span<const double> gt_bpm) {
  const std::vector<double> diff = check_pair(pred_bpm, gt_bpm, "bland_altman");
  std::vector<BlandAltmanPoint> rows(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) rows[i] = {(pred_bpm[i] + gt_bpm[i]) / 2.0, diff[i]};
  return rows;
}

std::vector<double> detrend_linear(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return std::vector<double>(n, 0.0);
  const double t_mean = static_cast<double>(n - 1) / 2.0;
  const double x_mean = mean_of(x);
  double stt = 0.0, stx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    stt += dt * dt;
    stx += dt * (x[i] - x_mean);
  }
  const double slope = stx / stt;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - x_mean - slope * (static_cast<double>(i) - t_mean);
  return out;
}

BvpSignal pos_baseline(const VideoClip& clip, const Rect& roi, const BaselineOptions& opts) {
  clip.validate();
  const std::size_t T = clip.frame_count();
  const std::array<std::vector<double>, 3> rgb{channel_trace(clip, 0, roi), channel_trace(clip, 1, roi),
                                               channel_trace(clip, 2, roi)};
  const auto l = static_cast<std::size_t>(std::ceil(opts.window_seconds * clip.fps));
  if (l < 2 || l > T) throw std::invalid_argument("pos_baseline: clip shorter than one projection window");

  std::vector<double> h(T, 0.0);
  std::vector<double> s0(l), s1(l), proj(l);
  for (std::size_t m = 0; m + l <= T; ++m) {
    std::array<double, 3> mean{};
    for (std::size_t c = 0; c < 3; ++c) {
      mean[c] = mean_of(std::span<const double>(rgb[c].data() + m, l));
      if (mean[c] == 0.0) throw std::invalid_argument("pos_baseline: zero mean colour in the roi");
    }
    for (std::size_t i = 0; i < l; ++i) {
      const double r = rgb[0][m + i] / mean[0], g = rgb[1][m + i] / mean[1], b = rgb[2][m + i] / mean[2];
      s0[i] = g - b;
      s1[i] = -2.0 * r + g + b;
    }
    const double sd1 = population_std(s1);
    const double alpha = sd1 == 0.0 ? 0.0 : population_std(s0) / sd1;
    for (std::size_t i = 0; i < l; ++i) proj[i] = s0[i] + alpha * s1[i];
    const double pm = mean_of(proj);
    for (std::size_t i = 0; i < l; ++i) h[m + i] += proj[i] - pm;
  }
  return finish_baseline(std::move(h), clip.fps, opts);
}

BvpSignal green_baseline(const VideoClip& clip, const Rect& roi, const BaselineOptions& opts) {
  clip.validate();
  return finish_baseline(channel_trace(clip, 1, roi), clip.fps, opts);
}

}  // namespace rhythm
