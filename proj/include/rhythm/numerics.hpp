#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "rhythm/tensor.hpp"

namespace rhythm {

using Triple = std::array<std::size_t, 3>;  // (T, H, W) per-axis ints

/// Convolution kernel, bias and geometry.
///
/// `weight` is [C_out, C_in / groups, kT, kH, kW]; a kT of 1 gives a per-frame
/// 2-D convolution. `theta` is only read by tdc_project.
struct ConvParams {
  Tensor weight;
  std::vector<double> bias;  // empty means no bias
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  std::size_t groups = 1;
  double theta = 0.0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1) * groups; }
  Triple kernel() const { return {weight.dim(2), weight.dim(3), weight.dim(4)}; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct NormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  double epsilon = 1e-5;
  bool identity = false;  // test hook: skip normalization entirely

  static NormParams unit(std::size_t channels, double epsilon = 1e-5);
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
};

enum class PoolKind { kMax, kAvg };

/// Output extent of a strided window sweep; avg windows may run past the end
/// and shrink, max windows may not.
std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, PoolKind kind);

/// Cross-correlation over [C_in, T, H, W] with zero padding.
Tensor conv3d(const Tensor& x, const ConvParams& p);

/// Transposed convolution along time only, kernel == stride, no overlap.
/// `weight` is [C_in, C_out, k, 1, 1]; output length is T * k.
Tensor conv_transpose_temporal(const Tensor& x, const ConvParams& p);

/// Training-mode batch normalization: statistics over every non-channel axis
/// of the current input.
Tensor batch_norm(const Tensor& x, const NormParams& p);

Tensor pool(const Tensor& x, PoolKind kind, Triple kernel, Triple stride);

Tensor softmax(const Tensor& x, std::size_t axis);
void softmax_inplace(std::span<double> row);

Tensor relu(Tensor x);
Tensor gelu(Tensor x);
double gelu(double v);

/// Mean over (H, W) per (channel, frame): [C, T, H, W] -> [C, T].
Tensor spatial_mean(const Tensor& x);

/// Dense layer y = x W^T + b applied to the rows of [N, in]; weight is [out, in].
Tensor linear_rows(const Tensor& x, const Tensor& weight, std::span<const double> bias);

/// Seeded PRNG handle shared by weight init and augmentation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Glorot-uniform weight of shape [out, in/groups, kT, kH, kW] with zero bias.
ConvParams make_conv(Rng& rng, std::size_t in, std::size_t out, Triple kernel, Triple stride = {1, 1, 1},
                     Triple padding = {0, 0, 0}, std::size_t groups = 1, bool bias = true);

/// Dense [out, in] Glorot-uniform matrix.
Tensor make_dense(Rng& rng, std::size_t in, std::size_t out);

}  // namespace rhythm
