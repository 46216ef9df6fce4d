#pragma once

#include "rhythm/data.hpp"
#include "rhythm/numerics.hpp"

namespace rhythm {

/// Fusion stem weights. The difference path and the raw path share one
/// first-stage structure (output width, normalization) but carry their own
/// input-channel weights: 12 channels of frame differences vs 3 of RGB.
struct StemParams {
  ConvParams stem1_diff;  // [C1, 12, 1, 5, 5], stride (1, 2, 2), pad (0, 2, 2)
  ConvParams stem1_raw;   // [C1, 3, 1, 5, 5], same geometry
  NormParams stem1_norm;
  ConvParams stem2;  // [C, C1, 1, 3, 3], pad (0, 1, 1)
  NormParams stem2_norm;
  double alpha = 0.5;
  double beta = 0.5;
  bool bypass_relu = false;  // test hook for linearity probes

  static StemParams random(Rng& rng, std::size_t stem1_channels, std::size_t channels);
};

struct PatchEmbedParams {
  ConvParams proj;  // [C, C, 1, 4, 4], stride (1, 4, 4)

  static PatchEmbedParams random(Rng& rng, std::size_t channels);
};

/// Four consecutive-frame differences per frame, concatenated to 12 channels
/// in the order D-2, D-1, D1, D2. Frames beyond the clip repeat the edge frame.
Tensor difference_frames(const VideoClip& clip);

/// conv -> BN -> ReLU -> 2x2 max pool; the first-stage feature extractor.
Tensor stem1_apply(const Tensor& x, const ConvParams& conv, const NormParams& norm, bool bypass_relu);

/// conv -> BN -> ReLU.
Tensor stem2_apply(const Tensor& x, const StemParams& p);

/// Fuses the difference and raw paths: [3, T, H, W] -> [C, T, H/4, W/4].
Tensor fusion_stem_forward(const VideoClip& clip, const StemParams& p);

/// Non-overlapping 4x4 spatial projection: [C, T, S, S'] -> [C, T, S/4, S'/4].
Tensor patch_embed(const Tensor& x, const PatchEmbedParams& p);

}  // namespace rhythm
