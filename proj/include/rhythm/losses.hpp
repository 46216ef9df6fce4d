#pragma once

#include <vector>

#include "rhythm/data.hpp"

namespace rhythm {

struct LossWeights {
  double alpha = 0.2;  // negative Pearson (time domain)
  double beta = 1.0;   // spectral cross-entropy
  double gamma = 1.0;  // heart-rate KL, reported only
};

struct LossOptions {
  double band_lo_hz = 0.67;
  double band_hi_hz = 3.0;
  std::size_t n_fft = 0;  // 0: max(2048, next power of two >= N)
  double sigma_bpm = 3.0;
};

/// Band-limited periodogram |DFT(x - mean)|^2 / N.
struct BandPsd {
  std::vector<double> freqs;
  std::vector<double> power;
  std::size_t n_fft = 0;

  std::size_t argmax() const;
};

struct PearsonLoss {
  double value = 0.0;
  bool pred_constant = false;  // r treated as 0
};

struct HrDistribution {
  double mu_bpm = 0.0;
  double sigma_bpm = 3.0;
};

struct LossComponents {
  double time = 0.0;
  double freq = 0.0;
  double hr = 0.0;  // monitor-only term, never differentiated
  double total = 0.0;
  bool pred_constant = false;
};

std::size_t default_loss_nfft(std::size_t n);

PearsonLoss pearson_loss(const BvpSignal& pred, const BvpSignal& gt);

BandPsd band_psd(const BvpSignal& bvp, double f_lo, double f_hi, std::size_t n_fft = 0);

double freq_ce_loss(const BvpSignal& pred, const BvpSignal& gt, const LossOptions& opts = {});

/// KL(p || q) between two normal distributions.
double gaussian_kl(const HrDistribution& p, const HrDistribution& q);

/// Normal centred on the spectral peak of `bvp` (in bpm).
HrDistribution hr_distribution(const BvpSignal& bvp, const LossOptions& opts = {});

double hr_kl_loss(const BvpSignal& pred, const BvpSignal& gt, const LossOptions& opts = {});

LossComponents overall_loss(const BvpSignal& pred, const BvpSignal& gt, const LossWeights& w = {},
                            const LossOptions& opts = {});

/// Analytic d(alpha * time + beta * freq) / d pred. The HR term is excluded.
std::vector<double> loss_gradients(const BvpSignal& pred, const BvpSignal& gt, const LossWeights& w = {},
                                   const LossOptions& opts = {});

}  // namespace rhythm
