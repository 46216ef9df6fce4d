#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rhythm/numerics.hpp"
#include "rhythm/tensor.hpp"

namespace rhythm {

/// RGB frame sequence, planar [3, T, H, W], intensities in [0, 255].
struct VideoClip {
  Tensor frames;
  double fps = 30.0;

  std::size_t frame_count() const { return frames.dim(1); }
  std::size_t height() const { return frames.dim(2); }
  std::size_t width() const { return frames.dim(3); }

  /// Throws unless the clip is [3, T >= 5, H, W] with fps > 0.
  void validate() const;
};

struct BvpSignal {
  std::vector<double> samples;
  double fs = 30.0;

  std::size_t size() const { return samples.size(); }
  void validate() const;
};

/// Pixel rectangle: top-left corner plus extents.
struct Rect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

struct SyntheticSceneSpec {
  std::size_t frames = 160;
  std::size_t height = 72;
  std::size_t width = 72;
  double fps = 30.0;
  double hr_bpm = 72.0;
  std::optional<double> hr_end_bpm;  // linear drift from hr_bpm to this value
  double pulse_amplitude = 1.0;
  std::array<double, 3> channel_weights{0.33, 0.77, 0.53};
  std::array<double, 3> skin_color{180.0, 130.0, 110.0};
  std::array<double, 3> background_color{40.0, 45.0, 50.0};
  double harmonic_phase = 0.5;  // radians, phase of the second harmonic
  double noise_sigma = 1.0;
  double motion_amplitude_px = 0.0;
  double motion_frequency_hz = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Axis-aligned box covering the synthetic skin ellipse at rest.
Rect synthetic_skin_box(const SyntheticSceneSpec& spec);

/// Frames plus the noise-free pulse that drives them.
std::pair<VideoClip, BvpSignal> generate_synthetic_clip(const SyntheticSceneSpec& spec);

/// Crops `box` from every frame and bilinearly resamples it to out_h x out_w
/// (half-pixel centres, samples clamped to the box).
VideoClip crop_window(const VideoClip& clip, const Rect& box, std::size_t out_h, std::size_t out_w);

struct ResampleConfig {
  double down_threshold_bpm = 90.0;  // gt_hr above this: downsample
  double up_threshold_bpm = 75.0;    // gt_hr below this: upsample
  std::vector<std::size_t> down_factors{2};
  std::vector<std::size_t> up_factors{2};
};

enum class ResampleKind { kNone, kDown, kUp };

struct ResampleResult {
  VideoClip clip;
  BvpSignal bvp;
  ResampleKind kind = ResampleKind::kNone;
  std::size_t factor = 1;
  /// Heart rate the augmented pair shows when played back at the original
  /// frame rate; equals the input rate when nothing was applied.
  double relabeled_hr_bpm = 0.0;
};

/// Heart-rate dependent temporal resampling of a clip/BVP pair. The output
/// fps/fs metadata is scaled so the physical heart rate is unchanged.
ResampleResult augment_temporal_resample(const VideoClip& clip, const BvpSignal& bvp, double gt_hr_bpm, Rng& rng,
                                         const ResampleConfig& config = {});

/// Deterministic resampling by a fixed factor (the building block of the augmentation).
VideoClip decimate_clip(const VideoClip& clip, std::size_t factor);
VideoClip interpolate_clip(const VideoClip& clip, std::size_t factor);
BvpSignal decimate_bvp(const BvpSignal& bvp, std::size_t factor);
BvpSignal interpolate_bvp(const BvpSignal& bvp, std::size_t factor);

/// Mirrors every frame horizontally with probability 0.5, or always when
/// `force` is set. Returns the clip and whether it was flipped.
std::pair<VideoClip, bool> augment_hflip(const VideoClip& clip, Rng& rng, std::optional<bool> force = std::nullopt);

/// Per-frame mean of one channel over a rectangle.
std::vector<double> channel_trace(const VideoClip& clip, std::size_t channel, const Rect& roi);

// Clip files: `<stem>.json` header plus a raw little-endian planar blob.

enum class SampleType { kU8, kF32, kF64 };

void write_clip(const std::filesystem::path& header_path, const VideoClip& clip, SampleType dtype = SampleType::kF64);
VideoClip read_clip(const std::filesystem::path& header_path);

/// Two-column CSV with a `time_s,value` header.
void write_bvp_csv(const std::filesystem::path& path, const BvpSignal& bvp);
BvpSignal read_bvp_csv(const std::filesystem::path& path);

}  // namespace rhythm
