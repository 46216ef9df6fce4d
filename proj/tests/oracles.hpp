// Slow, independent reference implementations used only by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <vector>

#include "rhythm/data.hpp"
#include "rhythm/numerics.hpp"
#include "rhythm/tensor.hpp"

namespace oracle {

using rhythm::Tensor;

inline Tensor random_tensor(rhythm::Rng& rng, rhythm::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline rhythm::VideoClip random_clip(rhythm::Rng& rng, std::size_t T, std::size_t H, std::size_t W) {
  return {random_tensor(rng, {3, T, H, W}, 0.0, 255.0), 30.0};
}

// Seven nested loops, no im2col, no GEMM.
inline Tensor conv3d(const Tensor& x, const rhythm::ConvParams& p) {
  const std::size_t cin = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t cout = p.weight.dim(0), cpg = p.weight.dim(1);
  const std::size_t kT = p.weight.dim(2), kH = p.weight.dim(3), kW = p.weight.dim(4);
  const std::size_t opg = cout / p.groups;
  const std::size_t To = (T + 2 * p.padding[0] - kT) / p.stride[0] + 1;
  const std::size_t Ho = (H + 2 * p.padding[1] - kH) / p.stride[1] + 1;
  const std::size_t Wo = (W + 2 * p.padding[2] - kW) / p.stride[2] + 1;
  (void)cin;
  Tensor y({cout, To, Ho, Wo});
  for (std::size_t o = 0; o < cout; ++o) {
    const std::size_t g = o / opg;
    for (std::size_t to = 0; to < To; ++to)
      for (std::size_t ho = 0; ho < Ho; ++ho)
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          double acc = p.bias.empty() ? 0.0 : p.bias[o];
          for (std::size_t i = 0; i < cpg; ++i)
            for (std::size_t a = 0; a < kT; ++a)
              for (std::size_t b = 0; b < kH; ++b)
                for (std::size_t c = 0; c < kW; ++c) {
                  const long t = long(to * p.stride[0] + a) - long(p.padding[0]);
                  const long h = long(ho * p.stride[1] + b) - long(p.padding[1]);
                  const long w = long(wo * p.stride[2] + c) - long(p.padding[2]);
                  if (t < 0 || h < 0 || w < 0 || t >= long(T) || h >= long(H) || w >= long(W)) continue;
                  const double wt = p.weight[(((o * cpg + i) * kT + a) * kH + b) * kW + c];
                  acc += wt * x.at(g * cpg + i, std::size_t(t), std::size_t(h), std::size_t(w));
                }
          y.at(o, to, ho, wo) = acc;
        }
  }
  return y;
}

// Batch statistics per channel with the biased variance.
inline Tensor batch_norm(const Tensor& x, const rhythm::NormParams& p) {
  const std::size_t C = x.dim(0), n = x.size() / C;
  Tensor y = x;
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[c * n + i];
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) var += (x[c * n + i] - mean) * (x[c * n + i] - mean);
    var /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[c * n + i] = p.gamma[c] * (x[c * n + i] - mean) / std::sqrt(var + p.epsilon) + p.beta[c];
    }
  }
  return y;
}

inline Tensor relu(Tensor x) {
  for (auto& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

inline Tensor maxpool_hw2(const Tensor& x) {
  const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
  Tensor y({C, T, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          y.at(c, t, h, w) = std::max({x.at(c, t, 2 * h, 2 * w), x.at(c, t, 2 * h, 2 * w + 1),
                                       x.at(c, t, 2 * h + 1, 2 * w), x.at(c, t, 2 * h + 1, 2 * w + 1)});
        }
  return y;
}

// Full softmax(Q K^T / sqrt(d)) V over every token pair; no regions.
inline Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t d = q.dim(0), n = q.size() / d;
  Tensor out(q.shape());
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double peak = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += q[c * n + i] * k[c * n + j];
      s[j] = acc / std::sqrt(double(d));
      peak = std::max(peak, s[j]);
    }
    double z = 0.0;
    for (auto& e : s) z += (e = std::exp(e - peak));
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v[c * n + j];
      out[c * n + i] = acc;
    }
  }
  return out;
}

// Weights of one query token's dense attention row.
inline std::vector<double> dense_attention_row(const Tensor& q, const Tensor& k, std::size_t i) {
  const std::size_t d = q.dim(0), n = q.size() / d;
  std::vector<double> s(n);
  double peak = -1e300;
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += q[c * n + i] * k[c * n + j];
    s[j] = acc / std::sqrt(double(d));
    peak = std::max(peak, s[j]);
  }
  double z = 0.0;
  for (auto& e : s) z += (e = std::exp(e - peak));
  for (auto& e : s) e /= z;
  return s;
}

inline std::vector<double> centered(const std::vector<double>& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - m;
  return y;
}

// |sum_n x_n e^{-2 pi i k n / n_fft}|^2, one bin at a time.
inline double dft_power(const std::vector<double>& x, std::size_t k, std::size_t n_fft) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    acc += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(n) / double(n_fft));
  }
  return std::norm(acc);
}

// Welch estimate written out directly: periodic Hann, per-segment mean removal,
// density scaling, one-sided doubling.
inline std::vector<double> welch(const std::vector<double>& x, double fs, std::size_t seg, std::size_t noverlap,
                                 std::size_t n_fft) {
  std::vector<double> w(seg);
  double wss = 0.0;
  for (std::size_t i = 0; i < seg; ++i) {
    w[i] = std::pow(std::sin(std::numbers::pi * double(i) / double(seg)), 2.0);
    wss += w[i] * w[i];
  }
  const std::size_t step = seg - noverlap;
  const std::size_t count = (x.size() - noverlap) / step;
  std::vector<double> psd(n_fft / 2 + 1, 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<double> part(x.begin() + long(s * step), x.begin() + long(s * step + seg));
    part = centered(part);
    for (std::size_t i = 0; i < seg; ++i) part[i] *= w[i];
    for (std::size_t k = 0; k < psd.size(); ++k) psd[k] += dft_power(part, k, n_fft) / (fs * wss);
  }
  for (std::size_t k = 0; k < psd.size(); ++k) {
    psd[k] /= double(count);
    if (k != 0 && !(n_fft % 2 == 0 && k == n_fft / 2)) psd[k] *= 2.0;
  }
  return psd;
}

inline std::vector<double> sinusoid(std::size_t n, double fs, double f, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * double(i) / fs + phase);
  return x;
}

// max|a - b| / max|b|: relative error in the max norm, robust to entries near zero.
inline double rel_err(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  return rel_err(Tensor({a.size()}, a), Tensor({b.size()}, b));
}

inline double relative_error(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

}  // namespace oracle
