#pragma once

#include <span>
#include <vector>

#include "rhythm/numerics.hpp"

namespace rhythm {

struct AttentionConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t topk = 0;       // 0 selects ceil(regions / 4)
  std::size_t partition = 2;  // temporal partition coefficient x
  double tdc_theta = 0.7;

  void validate() const;
  /// Number of routed regions per query region for a grid of `regions`.
  std::size_t resolve_topk(std::size_t regions) const;
};

/// Partition of a (T, S, S') token grid into pooling regions.
///
/// Tokens are numbered (t * S + h) * S' + w and regions (rt * nH + rh) * nW + rw.
/// Windows along each axis are `window` wide except a shorter trailing one.
class RegionGrid {
 public:
  RegionGrid() = default;
  RegionGrid(Triple tokens, Triple window);

  const Triple& tokens() const { return tokens_; }
  const Triple& window() const { return window_; }
  const Triple& regions() const { return regions_; }
  std::size_t region_count() const { return regions_[0] * regions_[1] * regions_[2]; }
  std::size_t token_count() const { return tokens_[0] * tokens_[1] * tokens_[2]; }
  std::size_t region_of(std::size_t token) const;
  const std::vector<std::size_t>& members(std::size_t region) const { return members_.at(region); }

 private:
  Triple tokens_{};
  Triple window_{};
  Triple regions_{};
  std::vector<std::vector<std::size_t>> members_;
};

/// Per query region, the selected key regions in descending score order.
struct RoutingTable {
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // rows * k

  std::size_t rows() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::size_t> row(std::size_t r) const { return {indices.data() + r * k, k}; }
};

struct PooledRegions {
  Tensor features;  // [regions, C]
  RegionGrid grid;
};

/// Refined-attention weights of one query token, for inspection.
struct AttentionProbe {
  std::size_t query_token = 0;
  bool captured = false;
  std::vector<std::size_t> key_tokens;
  std::vector<double> weights;
};

struct AttentionParams {
  ConvParams q_proj;    // TDC, [C, C, 3, 3, 3]
  ConvParams k_proj;    // TDC, [C, C, 3, 3, 3]
  ConvParams v_proj;    // pointwise [C, C, 1, 1, 1]
  ConvParams lce;       // depthwise [C, 1, 3, 3, 3]
  ConvParams out_proj;  // pointwise [C, C, 1, 1, 1]

  static AttentionParams random(Rng& rng, const AttentionConfig& cfg);
};

/// Everything the attention core computed for one call; filled on request.
struct AttentionTrace {
  std::size_t query_token = 0;  // token whose refined weights are exported
  Tensor scores;                // [regions, regions]
  RoutingTable routes;
  RegionGrid grid;
  std::vector<AttentionProbe> head_probes;
};

/// Temporal difference convolution: a 3x3x3 convolution minus theta times the
/// centre value weighted by the summed taps of the neighbouring time planes.
Tensor tdc_project(const Tensor& x, const ConvParams& p);

/// Grid for a stage with sampling coefficient n on a (T_ds, S, S') token volume.
RegionGrid make_region_grid(Triple tokens, std::size_t partition, std::size_t n);

/// Region-average pooling of [C, T_ds, S, S'] queries or keys.
PooledRegions region_pool(const Tensor& x, std::size_t partition, std::size_t n);

/// Raw region affinities Q' K'^T, [R, C] x [R, C] -> [R, R]; unscaled.
Tensor pre_attention_scores(const Tensor& q_pooled, const Tensor& k_pooled);

/// Indices of the k largest scores per row; ties go to the lower index.
RoutingTable topk_route(const Tensor& scores, std::size_t k);

/// Token attention restricted to each query region's routed regions, plus the
/// local context term lce(V) when `lce` is given. Q, K, V are [d, T, S, S'].
Tensor refined_attention(const Tensor& q, const Tensor& k, const Tensor& v, const RoutingTable& routes,
                         const RegionGrid& grid, const ConvParams* lce, AttentionProbe* probe = nullptr);

/// Channels [begin, begin + count) of a depthwise convolution.
ConvParams depthwise_slice(const ConvParams& p, std::size_t begin, std::size_t count);

/// Multi-head periodic sparse attention on [C, T_ds, S, S'] for a block with
/// sampling coefficient n. Routing is shared by all heads.
Tensor mhsa_forward(const Tensor& x, const AttentionConfig& cfg, const AttentionParams& p, std::size_t n,
                    AttentionTrace* trace = nullptr);

}  // namespace rhythm
