#include "rhythm/numerics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace rhythm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using StridedRowMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
  if (stride == 0) throw ShapeError(std::string("conv3d: zero stride on axis ") + axis);
  if (in + 2 * pad < k) {
    throw ShapeError(std::string("conv3d: kernel larger than padded input on axis ") + axis);
  }
  return (in + 2 * pad - k) / stride + 1;
}

void check_conv(const Tensor& x, const ConvParams& p) {
  require_rank(x, 4, "conv3d input");
  require_rank(p.weight, 5, "conv3d weight");
  if (p.groups == 0 || x.dim(0) % p.groups != 0 || p.out_channels() % p.groups != 0) {
    throw ShapeError("conv3d: channels not divisible by groups");
  }
  if (p.in_channels() != x.dim(0)) {
    throw ShapeError("conv3d: weight expects " + std::to_string(p.in_channels()) + " input channels, input has " +
                     std::to_string(x.dim(0)));
  }
  if (!p.bias.empty() && p.bias.size() != p.out_channels()) {
    throw ShapeError("conv3d: bias length does not match output channels");
  }
}

// One output frame of a dense (groups == 1) convolution via im2col + GEMM.
void conv_frame_gemm(const Tensor& x, const ConvParams& p, std::size_t to, const Triple& out_ext, RowMatrix& cols,
                     Tensor& out) {
  const auto [kT, kH, kW] = p.kernel();
  const std::size_t cin = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = out_ext[1], Wo = out_ext[2];
  const std::size_t plane = Ho * Wo;
  cols.setZero();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t kt = 0; kt < kT; ++kt) {
      const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * p.stride[0] + kt) -
                                static_cast<std::ptrdiff_t>(p.padding[0]);
      if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t kh = 0; kh < kH; ++kh) {
        for (std::size_t kw = 0; kw < kW; ++kw) {
          double* row = cols.row(static_cast<Eigen::Index>(((ci * kT + kt) * kH + kh) * kW + kw)).data();
          for (std::size_t ho = 0; ho < Ho; ++ho) {
            const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * p.stride[1] + kh) -
                                      static_cast<std::ptrdiff_t>(p.padding[1]);
            if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
            const double* src = &x.at(ci, static_cast<std::size_t>(ti), static_cast<std::size_t>(hi), 0);
            double* dst = row + ho * Wo;
            for (std::size_t wo = 0; wo < Wo; ++wo) {
              const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * p.stride[2] + kw) -
                                        static_cast<std::ptrdiff_t>(p.padding[2]);
              if (wi >= 0 && wi < static_cast<std::ptrdiff_t>(W)) dst[wo] = src[wi];
            }
          }
        }
      }
    }
  }
  const std::size_t cout = p.out_channels();
  const std::size_t K = cin * kT * kH * kW;
  ConstRowMap wmat(p.weight.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
  StridedRowMap dst(&out.at(0, to, 0, 0), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(plane),
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(out_ext[0] * plane)));
  dst.noalias() = wmat * cols;
}

void conv_grouped_direct(const Tensor& x, const ConvParams& p, const Triple& out_ext, Tensor& out) {
  const auto [kT, kH, kW] = p.kernel();
  const std::size_t T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t in_per_group = p.weight.dim(1);
  const std::size_t out_per_group = p.out_channels() / p.groups;
  const auto sT = static_cast<std::ptrdiff_t>(T), sH = static_cast<std::ptrdiff_t>(H),
             sW = static_cast<std::ptrdiff_t>(W);
  for (std::size_t co = 0; co < p.out_channels(); ++co) {
    const std::size_t g = co / out_per_group;
    for (std::size_t cl = 0; cl < in_per_group; ++cl) {
      const std::size_t ci = g * in_per_group + cl;
      for (std::size_t kt = 0; kt < kT; ++kt) {
        for (std::size_t kh = 0; kh < kH; ++kh) {
          for (std::size_t kw = 0; kw < kW; ++kw) {
            const double w = p.weight[(((co * in_per_group + cl) * kT + kt) * kH + kh) * kW + kw];
            if (w == 0.0) continue;
            for (std::size_t to = 0; to < out_ext[0]; ++to) {
              const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * p.stride[0] + kt) -
                                        static_cast<std::ptrdiff_t>(p.padding[0]);
              if (ti < 0 || ti >= sT) continue;
              for (std::size_t ho = 0; ho < out_ext[1]; ++ho) {
                const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * p.stride[1] + kh) -
                                          static_cast<std::ptrdiff_t>(p.padding[1]);
                if (hi < 0 || hi >= sH) continue;
                const double* src = &x.at(ci, static_cast<std::size_t>(ti), static_cast<std::size_t>(hi), 0);
                double* dst = &out.at(co, to, ho, 0);
                for (std::size_t wo = 0; wo < out_ext[2]; ++wo) {
                  const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * p.stride[2] + kw) -
                                            static_cast<std::ptrdiff_t>(p.padding[2]);
                  if (wi >= 0 && wi < sW) dst[wo] += w * src[wi];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

NormParams NormParams::unit(std::size_t channels, double epsilon) {
  NormParams p;
  p.gamma.assign(channels, 1.0);
  p.beta.assign(channels, 0.0);
  p.epsilon = epsilon;
  return p;
}

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, PoolKind kind) {
  if (kernel == 0 || stride == 0) throw ShapeError("pool: kernel and stride must be >= 1");
  if (kernel > in) {
    throw ShapeError("pool: kernel " + std::to_string(kernel) + " larger than input extent " + std::to_string(in));
  }
  if (kind == PoolKind::kMax) return (in - kernel) / stride + 1;
  return (in - kernel + stride - 1) / stride + 1;
}

Tensor conv3d(const Tensor& x, const ConvParams& p) {
  check_conv(x, p);
  const auto [kT, kH, kW] = p.kernel();
  const Triple out_ext{conv_extent(x.dim(1), kT, p.stride[0], p.padding[0], "T"),
                       conv_extent(x.dim(2), kH, p.stride[1], p.padding[1], "H"),
                       conv_extent(x.dim(3), kW, p.stride[2], p.padding[2], "W")};
  const std::size_t cout = p.out_channels();
  Tensor out({cout, out_ext[0], out_ext[1], out_ext[2]});

  const bool pointwise = kT == 1 && kH == 1 && kW == 1 && p.stride == Triple{1, 1, 1} &&
                         p.padding == Triple{0, 0, 0};
  if (p.groups == 1 && pointwise) {
    const auto cin = static_cast<Eigen::Index>(x.dim(0));
    const auto n = static_cast<Eigen::Index>(x.size() / x.dim(0));
    ConstRowMap wmat(p.weight.data().data(), static_cast<Eigen::Index>(cout), cin);
    ConstRowMap xmat(x.data().data(), cin, n);
    Eigen::Map<RowMatrix>(out.data().data(), static_cast<Eigen::Index>(cout), n).noalias() = wmat * xmat;
  } else if (p.groups == 1) {
    const std::size_t K = x.dim(0) * kT * kH * kW;
    RowMatrix cols(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(out_ext[1] * out_ext[2]));
    for (std::size_t to = 0; to < out_ext[0]; ++to) conv_frame_gemm(x, p, to, out_ext, cols, out);
  } else {
    conv_grouped_direct(x, p, out_ext, out);
  }

  if (!p.bias.empty()) {
    const std::size_t inner = out.size() / cout;
    for (std::size_t co = 0; co < cout; ++co) {
      double* dst = out.data().data() + co * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += p.bias[co];
    }
  }
  return out;
}

Tensor conv_transpose_temporal(const Tensor& x, const ConvParams& p) {
  require_rank(x, 4, "conv_transpose_temporal input");
  require_rank(p.weight, 5, "conv_transpose_temporal weight");
  const std::size_t cin = p.weight.dim(0), cout = p.weight.dim(1), k = p.weight.dim(2);
  if (p.weight.dim(3) != 1 || p.weight.dim(4) != 1 || p.stride[0] != k || p.groups != 1) {
    throw ShapeError("conv_transpose_temporal: expects kernel == stride along time and 1x1 spatial kernel");
  }
  if (x.dim(0) != cin) throw ShapeError("conv_transpose_temporal: input channel mismatch");
  if (!p.bias.empty() && p.bias.size() != cout) throw ShapeError("conv_transpose_temporal: bias length mismatch");
  const std::size_t T = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({cout, T * k, x.dim(2), x.dim(3)});
  ConstRowMap xmat(x.data().data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(T * plane));
  RowMatrix wj(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin));
  RowMatrix y;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < cin; ++i) {
      for (std::size_t o = 0; o < cout; ++o) {
        wj(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = p.weight[(i * cout + o) * k + j];
      }
    }
    y.noalias() = wj * xmat;
    for (std::size_t o = 0; o < cout; ++o) {
      const double b = p.bias.empty() ? 0.0 : p.bias[o];
      for (std::size_t t = 0; t < T; ++t) {
        const double* src = y.row(static_cast<Eigen::Index>(o)).data() + t * plane;
        double* dst = &out.at(o, t * k + j, 0, 0);
        for (std::size_t s = 0; s < plane; ++s) dst[s] = src[s] + b;
      }
    }
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const NormParams& p) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis and at least one more");
  if (p.identity) return x;
  const std::size_t C = x.dim(0);
  if (p.gamma.size() != C || p.beta.size() != C) throw ShapeError("batch_norm: parameter length mismatch");
  if (!(p.epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be > 0");
  const std::size_t inner = x.size() / C;
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = x.data().data() + c * inner;
    double* dst = out.data().data() + c * inner;
    double mean = 0.0;
    for (std::size_t i = 0; i < inner; ++i) mean += src[i];
    mean /= static_cast<double>(inner);
    double var = 0.0;
    for (std::size_t i = 0; i < inner; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(inner);
    const double scale = p.gamma[c] / std::sqrt(var + p.epsilon);
    for (std::size_t i = 0; i < inner; ++i) dst[i] = scale * (src[i] - mean) + p.beta[c];
  }
  return out;
}

Tensor pool(const Tensor& x, PoolKind kind, Triple kernel, Triple stride) {
  require_rank(x, 4, "pool input");
  Triple out_ext{};
  for (std::size_t a = 0; a < 3; ++a) out_ext[a] = pooled_extent(x.dim(a + 1), kernel[a], stride[a], kind);
  const std::size_t C = x.dim(0);
  Tensor out({C, out_ext[0], out_ext[1], out_ext[2]});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ot = 0; ot < out_ext[0]; ++ot) {
      const std::size_t t0 = ot * stride[0], t1 = std::min(t0 + kernel[0], x.dim(1));
      for (std::size_t oh = 0; oh < out_ext[1]; ++oh) {
        const std::size_t h0 = oh * stride[1], h1 = std::min(h0 + kernel[1], x.dim(2));
        for (std::size_t ow = 0; ow < out_ext[2]; ++ow) {
          const std::size_t w0 = ow * stride[2], w1 = std::min(w0 + kernel[2], x.dim(3));
          double acc = kind == PoolKind::kMax ? -std::numeric_limits<double>::infinity() : 0.0;
          const double first = x.at(c, t0, h0, w0);
          bool uniform = true;
          for (std::size_t t = t0; t < t1; ++t) {
            for (std::size_t h = h0; h < h1; ++h) {
              const double* row = &x.at(c, t, h, 0);
              for (std::size_t w = w0; w < w1; ++w) {
                acc = kind == PoolKind::kMax ? std::max(acc, row[w]) : acc + row[w];
                uniform = uniform && row[w] == first;
              }
            }
          }
          // A uniform window averages to its value exactly, without summation rounding.
          if (kind == PoolKind::kAvg) acc = uniform ? first : acc / static_cast<double>((t1 - t0) * (h1 - h0) * (w1 - w0));
          out.at(c, ot, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double peak = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (auto& v : row) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : row) v /= sum;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t n = x.dim(axis);
  Tensor out = x;
  std::vector<double> row(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t j = 0; j < n; ++j) row[j] = x[(o * n + j) * inner + i];
      softmax_inplace(row);
      for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + i] = row[j];
    }
  }
  return out;
}

Tensor relu(Tensor x) {
  for (auto& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

Tensor gelu(Tensor x) {
  for (auto& v : x.values()) v = gelu(v);
  return x;
}

Tensor spatial_mean(const Tensor& x) {
  require_rank(x, 4, "spatial_mean input");
  const std::size_t C = x.dim(0), T = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({C, T});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = &x.at(c, t, 0, 0);
      double acc = 0.0;
      for (std::size_t s = 0; s < plane; ++s) acc += src[s];
      out[c * T + t] = acc / static_cast<double>(plane);
    }
  }
  return out;
}

Tensor linear_rows(const Tensor& x, const Tensor& weight, std::span<const double> bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (weight.dim(1) != x.dim(1)) throw ShapeError("linear: input width does not match weight");
  if (!bias.empty() && bias.size() != weight.dim(0)) throw ShapeError("linear: bias length mismatch");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto outw = static_cast<Eigen::Index>(weight.dim(0));
  Tensor out({x.dim(0), weight.dim(0)});
  Eigen::Map<RowMatrix> y(out.data().data(), n, outw);
  y.noalias() = ConstRowMap(x.data().data(), n, in) * ConstRowMap(weight.data().data(), outw, in).transpose();
  if (!bias.empty()) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < outw; ++c) y(r, c) += bias[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

ConvParams make_conv(Rng& rng, std::size_t in, std::size_t out, Triple kernel, Triple stride, Triple padding,
                     std::size_t groups, bool bias) {
  if (groups == 0 || in % groups != 0 || out % groups != 0) throw ShapeError("make_conv: bad group count");
  const std::size_t receptive = kernel[0] * kernel[1] * kernel[2];
  const double fan_in = static_cast<double>(in / groups * receptive);
  const double fan_out = static_cast<double>(out * receptive);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  ConvParams p;
  p.weight = Tensor({out, in / groups, kernel[0], kernel[1], kernel[2]});
  for (auto& v : p.weight.values()) v = rng.uniform(-a, a);
  if (bias) p.bias.assign(out, 0.0);
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

Tensor make_dense(Rng& rng, std::size_t in, std::size_t out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({out, in});
  for (auto& v : w.values()) v = rng.uniform(-a, a);
  return w;
}

}  // namespace rhythm
