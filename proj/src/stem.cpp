#include "rhythm/stem.hpp"

#include <algorithm>
#include <array>

namespace rhythm {

StemParams StemParams::random(Rng& rng, std::size_t stem1_channels, std::size_t channels) {
  StemParams p;
  p.stem1_diff = make_conv(rng, 12, stem1_channels, {1, 5, 5}, {1, 2, 2}, {0, 2, 2});
  p.stem1_raw = make_conv(rng, 3, stem1_channels, {1, 5, 5}, {1, 2, 2}, {0, 2, 2});
  p.stem1_norm = NormParams::unit(stem1_channels);
  p.stem2 = make_conv(rng, stem1_channels, channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
  p.stem2_norm = NormParams::unit(channels);
  return p;
}

PatchEmbedParams PatchEmbedParams::random(Rng& rng, std::size_t channels) {
  return {make_conv(rng, channels, channels, {1, 4, 4}, {1, 4, 4})};
}

Tensor difference_frames(const VideoClip& clip) {
  clip.validate();
  const std::size_t T = clip.frame_count(), plane = clip.height() * clip.width();
  Tensor out({12, T, clip.height(), clip.width()});
  auto frame = [&](std::size_t c, std::ptrdiff_t t) {
    const auto clamped = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, static_cast<std::ptrdiff_t>(T) - 1));
    return &clip.frames.at(c, clamped, 0, 0);
  };
  // (later, earlier) frame offsets for D-2, D-1, D1, D2.
  constexpr std::array<std::array<std::ptrdiff_t, 2>, 4> pairs{{{-1, -2}, {0, -1}, {1, 0}, {2, 1}}};
  for (std::size_t d = 0; d < pairs.size(); ++d) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        const auto ti = static_cast<std::ptrdiff_t>(t);
        const double* later = frame(c, ti + pairs[d][0]);
        const double* earlier = frame(c, ti + pairs[d][1]);
        double* dst = &out.at(d * 3 + c, t, 0, 0);
        for (std::size_t s = 0; s < plane; ++s) dst[s] = later[s] - earlier[s];
      }
    }
  }
  return out;
}

Tensor stem1_apply(const Tensor& x, const ConvParams& conv, const NormParams& norm, bool bypass_relu) {
  Tensor y = batch_norm(conv3d(x, conv), norm);
  if (!bypass_relu) y = relu(std::move(y));
  return pool(y, PoolKind::kMax, {1, 2, 2}, {1, 2, 2});
}

Tensor stem2_apply(const Tensor& x, const StemParams& p) {
  Tensor y = batch_norm(conv3d(x, p.stem2), p.stem2_norm);
  return p.bypass_relu ? y : relu(std::move(y));
}

Tensor fusion_stem_forward(const VideoClip& clip, const StemParams& p) {
  clip.validate();
  if (clip.height() % 4 != 0 || clip.width() % 4 != 0) {
    throw ShapeError("fusion stem: frame size " + std::to_string(clip.height()) + "x" +
                     std::to_string(clip.width()) + " is not divisible by 4");
  }
  const Tensor x_origin = stem1_apply(clip.frames, p.stem1_raw, p.stem1_norm, p.bypass_relu);

  Tensor out = p.alpha * stem2_apply(x_origin, p);
  // With beta == 0 the difference path contributes nothing.
  if (p.beta != 0.0) {
    const Tensor x_diff = stem1_apply(difference_frames(clip), p.stem1_diff, p.stem1_norm, p.bypass_relu);
    Tensor mixed = p.alpha * x_origin + p.beta * x_diff;
    out += p.beta * stem2_apply(mixed, p);
  }
  return out;
}

Tensor patch_embed(const Tensor& x, const PatchEmbedParams& p) {
  require_rank(x, 4, "patch_embed input");
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError("patch_embed: spatial extents " + shape_to_string(x.shape()) + " not divisible by 4");
  }
  if (p.proj.kernel() != Triple{1, 4, 4} || p.proj.stride != Triple{1, 4, 4}) {
    throw ShapeError("patch_embed: projection must be a (1,4,4) kernel with (1,4,4) stride");
  }
  return conv3d(x, p.proj);
}

}  // namespace rhythm
