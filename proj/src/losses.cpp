#include "rhythm/losses.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rhythm {

namespace {

void check_pair(const BvpSignal& pred, const BvpSignal& gt) {
  pred.validate();
  gt.validate();
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("loss: prediction has " + std::to_string(pred.size()) + " samples, ground truth " +
                                std::to_string(gt.size()));
  }
  if (pred.fs != gt.fs) throw std::invalid_argument("loss: prediction and ground truth sampling rates differ");
}

std::vector<double> centered(const std::vector<double>& x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mean;
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// DFT bins of the band with their real/imaginary parts, kept for gradients.
struct BandDft {
  std::vector<std::size_t> bins;
  std::vector<double> freqs;
  std::vector<double> re;
  std::vector<double> im;
  std::vector<double> power;
  std::size_t n_fft = 0;
};

// cos/sin of 2 pi j / n_fft for every j; bin k at sample n uses j = k * n mod n_fft.
struct Twiddles {
  std::vector<double> cos, sin;
  explicit Twiddles(std::size_t n_fft) : cos(n_fft), sin(n_fft) {
    for (std::size_t j = 0; j < n_fft; ++j) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_fft);
      cos[j] = std::cos(theta);
      sin[j] = std::sin(theta);
    }
  }
};

BandDft band_dft(const BvpSignal& bvp, double f_lo, double f_hi, std::size_t n_fft) {
  bvp.validate();
  const std::size_t N = bvp.size();
  if (n_fft == 0) n_fft = default_loss_nfft(N);
  if (n_fft < N) throw std::invalid_argument("band_psd: n_fft smaller than the signal");
  if (!(f_lo > 0.0) || !(f_hi > f_lo)) throw std::invalid_argument("band_psd: band must satisfy 0 < lo < hi");
  if (f_hi > bvp.fs / 2.0) throw std::invalid_argument("band_psd: band exceeds the Nyquist frequency");

  const double df = bvp.fs / static_cast<double>(n_fft);
  const auto first = static_cast<std::size_t>(std::ceil(f_lo / df - 1e-9));
  const auto last = static_cast<std::size_t>(std::floor(f_hi / df + 1e-9));
  if (last < first) throw std::invalid_argument("band_psd: band contains no frequency bins");

  const std::vector<double> x = centered(bvp.samples);
  const Twiddles tw(n_fft);
  BandDft out;
  out.n_fft = n_fft;
  for (std::size_t k = first; k <= last; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0, j = 0; n < N; ++n, j = (j + k) % n_fft) {
      re += x[n] * tw.cos[j];
      im -= x[n] * tw.sin[j];
    }
    out.bins.push_back(k);
    out.freqs.push_back(static_cast<double>(k) * df);
    out.re.push_back(re);
    out.im.push_back(im);
    out.power.push_back((re * re + im * im) / static_cast<double>(N));
  }
  return out;
}

std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double p) { return p == 0.0; });
}

double log_sum_exp(const std::vector<double>& v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

}  // namespace

std::size_t default_loss_nfft(std::size_t n) { return std::max<std::size_t>(2048, std::bit_ceil(n)); }

std::size_t BandPsd::argmax() const {
  if (power.empty()) throw std::invalid_argument("band PSD is empty");
  return argmax_first(power);
}

PearsonLoss pearson_loss(const BvpSignal& pred, const BvpSignal& gt) {
  check_pair(pred, gt);
  const auto a = centered(pred.samples);
  const auto b = centered(gt.samples);
  const double saa = dot(a, a), sbb = dot(b, b);
  if (sbb == 0.0) throw std::invalid_argument("pearson_loss: ground truth is constant");
  if (saa == 0.0) return {1.0, true};
  const double r = std::clamp(dot(a, b) / std::sqrt(saa * sbb), -1.0, 1.0);
  return {1.0 - r, false};
}

BandPsd band_psd(const BvpSignal& bvp, double f_lo, double f_hi, std::size_t n_fft) {
  BandDft dft = band_dft(bvp, f_lo, f_hi, n_fft);
  return {std::move(dft.freqs), std::move(dft.power), dft.n_fft};
}

double freq_ce_loss(const BvpSignal& pred, const BvpSignal& gt, const LossOptions& opts) {
  check_pair(pred, gt);
  const BandPsd gt_psd = band_psd(gt, opts.band_lo_hz, opts.band_hi_hz, opts.n_fft);
  const BandPsd pred_psd = band_psd(pred, opts.band_lo_hz, opts.band_hi_hz, opts.n_fft);
  if (all_zero(gt_psd.power) || all_zero(pred_psd.power)) {
    throw std::invalid_argument("freq_ce_loss: degenerate (all-zero) band spectrum");
  }
  return log_sum_exp(pred_psd.power) - pred_psd.power[gt_psd.argmax()];
}

double gaussian_kl(const HrDistribution& p, const HrDistribution& q) {
  if (!(p.sigma_bpm > 0.0) || !(q.sigma_bpm > 0.0)) throw std::invalid_argument("gaussian_kl: sigma must be > 0");
  const double diff = p.mu_bpm - q.mu_bpm;
  return std::log(q.sigma_bpm / p.sigma_bpm) +
         (p.sigma_bpm * p.sigma_bpm + diff * diff) / (2.0 * q.sigma_bpm * q.sigma_bpm) - 0.5;
}

HrDistribution hr_distribution(const BvpSignal& bvp, const LossOptions& opts) {
  const BandPsd psd = band_psd(bvp, opts.band_lo_hz, opts.band_hi_hz, opts.n_fft);
  if (all_zero(psd.power)) throw std::invalid_argument("hr_distribution: degenerate (all-zero) band spectrum");
  return {60.0 * psd.freqs[psd.argmax()], opts.sigma_bpm};
}

double hr_kl_loss(const BvpSignal& pred, const BvpSignal& gt, const LossOptions& opts) {
  check_pair(pred, gt);
  const HrDistribution g = hr_distribution(gt, opts);
  const HrDistribution p = hr_distribution(pred, opts);
  // Equal widths reduce the KL to (mu_gt - mu_pred)^2 / (2 sigma^2).
  const double diff = g.mu_bpm - p.mu_bpm;
  return diff * diff / (2.0 * opts.sigma_bpm * opts.sigma_bpm);
}

LossComponents overall_loss(const BvpSignal& pred, const BvpSignal& gt, const LossWeights& w,
                            const LossOptions& opts) {
  LossComponents c;
  const PearsonLoss time = pearson_loss(pred, gt);
  c.time = time.value;
  c.pred_constant = time.pred_constant;
  c.freq = freq_ce_loss(pred, gt, opts);
  c.hr = hr_kl_loss(pred, gt, opts);
  c.total = w.alpha * c.time + w.beta * c.freq + w.gamma * c.hr;
  return c;
}

std::vector<double> loss_gradients(const BvpSignal& pred, const BvpSignal& gt, const LossWeights& w,
                                   const LossOptions& opts) {
  check_pair(pred, gt);
  const std::size_t N = pred.size();
  std::vector<double> grad(N, 0.0);

  if (w.alpha != 0.0) {
    const auto a = centered(pred.samples);
    const auto b = centered(gt.samples);
    const double saa = dot(a, a), sbb = dot(b, b);
    if (sbb == 0.0) throw std::invalid_argument("loss_gradients: ground truth is constant");
    if (saa > 0.0) {
      const double norm_a = std::sqrt(saa), norm_b = std::sqrt(sbb);
      const double r = dot(a, b) / (norm_a * norm_b);
      // d(1 - r)/dx; a and b are already centred so the mean projection is implicit.
      for (std::size_t n = 0; n < N; ++n) grad[n] -= w.alpha * (b[n] / (norm_a * norm_b) - r * a[n] / saa);
    }
  }

  if (w.beta != 0.0) {
    const BandPsd gt_psd = band_psd(gt, opts.band_lo_hz, opts.band_hi_hz, opts.n_fft);
    const BandDft p = band_dft(pred, opts.band_lo_hz, opts.band_hi_hz, opts.n_fft);
    if (all_zero(gt_psd.power) || all_zero(p.power)) {
      throw std::invalid_argument("loss_gradients: degenerate (all-zero) band spectrum");
    }
    std::vector<double> dlogit = p.power;
    softmax_inplace(dlogit);
    dlogit[gt_psd.argmax()] -= 1.0;

    // dP_k/dx_n = 2 (Re_k cos - Im_k sin) / N on the centred signal.
    const Twiddles tw(p.n_fft);
    std::vector<double> g(N, 0.0);
    for (std::size_t b = 0; b < p.bins.size(); ++b) {
      const double coeff = 2.0 * dlogit[b] / static_cast<double>(N);
      for (std::size_t n = 0, j = 0; n < N; ++n, j = (j + p.bins[b]) % p.n_fft) {
        g[n] += coeff * (p.re[b] * tw.cos[j] - p.im[b] * tw.sin[j]);
      }
    }
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) grad[n] += w.beta * (g[n] - mean);
  }
  return grad;
}

}  // namespace rhythm
