#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rhythm/data.hpp"

namespace rhythm {

struct FilterSpec {
  std::size_t order = 2;  // analog prototype order; the band-pass has 2 * order poles
  double f_lo = 0.75;
  double f_hi = 2.5;
  double fs = 30.0;

  void validate() const;
};

struct FilterCoefficients {
  std::vector<double> b;
  std::vector<double> a;  // a[0] == 1
};

/// Digital Butterworth band-pass via analog prototype, low-pass to band-pass
/// transform and bilinear transform with prewarped edges.
FilterCoefficients design_butterworth_bandpass(const FilterSpec& spec);

/// Direct-form II transposed filter; `zi` may be empty.
std::vector<double> lfilter(const FilterCoefficients& c, std::span<const double> x, std::span<const double> zi = {});

/// Steady-state initial conditions of lfilter for a unit step.
std::vector<double> lfilter_zi(const FilterCoefficients& c);

/// Forward-backward filtering with odd reflection padding of 3 * max(len(a), len(b)).
std::vector<double> filtfilt(const FilterCoefficients& c, std::span<const double> x);

/// Zero-phase Butterworth band-pass at the signal's own sampling rate.
BvpSignal butterworth_bandpass(const BvpSignal& x, double f_lo = 0.75, double f_hi = 2.5, std::size_t order = 2);

struct WelchSpec {
  std::size_t segment_len = 0;  // 0: min(N, 10 * fs)
  double overlap = 0.5;
  std::size_t n_fft = 0;  // 0: max(2048, next power of two >= segment)
};

struct Spectrum {
  std::vector<double> freqs;
  std::vector<double> power;
};

/// Averaged periodograms of Hann-windowed, mean-removed segments; one-sided
/// power spectral density in units^2 / Hz.
Spectrum welch_psd(const BvpSignal& x, const WelchSpec& spec = {});

struct HrEstimate {
  double bpm = 0.0;
  double peak_hz = 0.0;
  Spectrum band;  // Welch PSD restricted to the search band
};

/// 60 x the Welch PSD peak frequency inside [f_lo, f_hi].
HrEstimate estimate_hr(const BvpSignal& x, double f_lo = 0.67, double f_hi = 3.0, const WelchSpec& spec = {});

struct SnrOptions {
  double half_width_hz = 0.1;
  double noise_lo_hz = 0.6;
  double noise_hi_hz = 4.0;
  double clamp_db = 60.0;
};

struct SnrResult {
  double db = 0.0;
  bool clamped = false;
};

/// Power within +-half_width of the HR fundamental and first harmonic over the
/// remaining power of the noise band, from a rectangular-window periodogram.
SnrResult snr_metric(const BvpSignal& x, double gt_hr_bpm, const SnrOptions& opts = {});

struct HrMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  std::optional<double> pearson_rho;  // empty when either series is constant
  std::optional<double> snr_db;
};

HrMetrics hr_metrics(std::span<const double> pred_bpm, std::span<const double> gt_bpm);

struct BlandAltmanPoint {
  double mean = 0.0;
  double difference = 0.0;  // pred - gt
};

std::vector<BlandAltmanPoint> bland_altman(std::span<const double> pred_bpm, std::span<const double> gt_bpm);

/// Least-squares straight-line removal.
std::vector<double> detrend_linear(std::span<const double> x);

struct BaselineOptions {
  double window_seconds = 1.6;
  double f_lo = 0.75;
  double f_hi = 2.5;
};

/// Plane-orthogonal-to-skin projection of the ROI's RGB means with
/// overlap-added windows, then detrended and band-passed.
BvpSignal pos_baseline(const VideoClip& clip, const Rect& roi, const BaselineOptions& opts = {});

/// Detrended, band-passed ROI mean of the green channel.
BvpSignal green_baseline(const VideoClip& clip, const Rect& roi, const BaselineOptions& opts = {});

}  // namespace rhythm
