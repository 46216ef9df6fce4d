#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rhythm/attention.hpp"
#include "rhythm/data.hpp"
#include "rhythm/numerics.hpp"
#include "rhythm/stem.hpp"

namespace rhythm {

/// Residual topology inside a TPT block.
struct BlockLayout {
  bool pre_norm = true;        // BN before attention/FFN; false puts it after each residual sum
  bool block_residual = true;  // full-resolution skip from block input to output
};

struct ModelConfig {
  std::vector<std::size_t> stages{1, 2, 3};  // sampling coefficient n of each TPT block, in order
  std::size_t stem_channels = 32;
  AttentionConfig attention;
  std::size_t ffn_ratio = 2;
  std::size_t head_hidden = 0;  // 0 selects channels / 2
  double alpha = 0.5;
  double beta = 0.5;
  double bn_epsilon = 1e-5;
  BlockLayout layout;
  std::uint64_t seed = 0;

  std::size_t channels() const { return attention.channels; }
  std::size_t hidden_width() const { return head_hidden == 0 ? std::max<std::size_t>(1, channels() / 2) : head_hidden; }
  std::size_t max_sampling() const;
  void validate() const;
};

struct DownSampler {
  NormParams norm;
  ConvParams conv;  // [C, C, 2, 1, 1], stride (2, 1, 1)
};

struct FeedForwardParams {
  ConvParams fc1;     // pointwise C -> rC
  ConvParams hidden;  // depthwise 3x3x3 at rC
  NormParams hidden_norm;
  ConvParams fc2;  // pointwise rC -> C
  bool bypass_gelu = false;  // test hook

  static FeedForwardParams random(Rng& rng, std::size_t channels, std::size_t ratio, double eps);
};

struct TptBlockParams {
  std::size_t n = 1;
  std::vector<DownSampler> down;
  NormParams attn_norm;
  AttentionParams attention;
  NormParams ffn_norm;
  FeedForwardParams ffn;
  std::vector<ConvParams> up;  // transposed, weight [C, C, 2, 1, 1]

  static TptBlockParams random(Rng& rng, const ModelConfig& cfg, std::size_t n);
};

struct HeadParams {
  Tensor fc1;  // [hidden, C]
  std::vector<double> bias1;
  Tensor fc2;  // [1, hidden]
  std::vector<double> bias2;
};

struct ModelWeights {
  StemParams stem;
  PatchEmbedParams embed;
  std::vector<TptBlockParams> blocks;
  HeadParams head;
};

/// Seeded random initialisation for `cfg` (Glorot-uniform kernels, zero
/// biases, unit normalization).
ModelWeights init_weights(const ModelConfig& cfg);

/// Visits every learnable array with a stable dotted name.
void for_each_parameter(ModelWeights& w, const std::function<void(const std::string&, const Shape&, std::span<double>)>& fn);
void for_each_parameter(const ModelWeights& w,
                        const std::function<void(const std::string&, const Shape&, std::span<const double>)>& fn);

Tensor temporal_downsample(const Tensor& x, const DownSampler& p);
Tensor temporal_upsample(const Tensor& x, const ConvParams& p);
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

/// Down-sample n times, attention and feed-forward with residuals, up-sample
/// n times, then add the block input.
Tensor tpt_block_forward(const Tensor& x, const TptBlockParams& p, const AttentionConfig& cfg,
                         AttentionTrace* trace = nullptr, const BlockLayout& layout = {});

/// Spatial mean then a per-frame two-layer MLP: [C, T, S, S'] -> T samples.
std::vector<double> predictor_head(const Tensor& x, const HeadParams& p);

/// Request to capture the attention internals of one stage.
struct ForwardTrace {
  std::size_t stage = 0;
  AttentionTrace attention;
};

BvpSignal model_forward(const VideoClip& clip, const ModelConfig& cfg, const ModelWeights& w,
                        ForwardTrace* trace = nullptr);

struct CostEntry {
  std::string name;
  std::uint64_t parameters = 0;
  std::uint64_t macs = 0;
};

struct ModelSummary {
  std::uint64_t parameters = 0;
  std::uint64_t macs = 0;
  std::vector<CostEntry> breakdown;
};

/// Exact parameter count and closed-form multiply-accumulate count for a
/// (T, H, W) input. Attention MACs assume every routed region holds the
/// average number of tokens.
ModelSummary model_summary(const ModelConfig& cfg, Triple input = {160, 128, 128});

// Config files: INI-style `key = value` lines under [model] and [init].

ModelConfig parse_model_config(const std::string& text);
ModelConfig read_model_config(const std::filesystem::path& path);
std::string format_model_config(const ModelConfig& cfg);
/// Hex FNV-1a digest of the canonical config text.
std::string config_hash(const ModelConfig& cfg);
/// 16-digit hex FNV-1a of arbitrary text.
std::string text_hash(std::string_view text);

// Checkpoints: a JSON manifest (name -> byte offset, shape) beside a raw
// little-endian float64 blob.

void write_checkpoint(const std::filesystem::path& manifest_path, const ModelWeights& w, const ModelConfig& cfg);
ModelWeights read_checkpoint(const std::filesystem::path& manifest_path, const ModelConfig& cfg);

}  // namespace rhythm
