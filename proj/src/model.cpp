#include "rhythm/model.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace rhythm {

std::size_t ModelConfig::max_sampling() const {
  return stages.empty() ? 0 : *std::max_element(stages.begin(), stages.end());
}

void ModelConfig::validate() const {
  attention.validate();
  if (stages.empty()) throw std::invalid_argument("model config: stage schedule must not be empty");
  for (auto n : stages) {
    if (n > 8) throw std::invalid_argument("model config: sampling coefficient " + std::to_string(n) + " too large");
  }
  if (stem_channels == 0) throw std::invalid_argument("model config: stem_channels must be >= 1");
  if (ffn_ratio == 0) throw std::invalid_argument("model config: ffn_ratio must be >= 1");
  if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0) {
    throw std::invalid_argument("model config: alpha and beta must lie in [0, 1]");
  }
  if (!(bn_epsilon > 0.0)) throw std::invalid_argument("model config: bn_epsilon must be > 0");
}

FeedForwardParams FeedForwardParams::random(Rng& rng, std::size_t channels, std::size_t ratio, double eps) {
  const std::size_t hidden = channels * ratio;
  FeedForwardParams p;
  p.fc1 = make_conv(rng, channels, hidden, {1, 1, 1});
  p.hidden = make_conv(rng, hidden, hidden, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, hidden);
  p.hidden_norm = NormParams::unit(hidden, eps);
  p.fc2 = make_conv(rng, hidden, channels, {1, 1, 1});
  return p;
}

TptBlockParams TptBlockParams::random(Rng& rng, const ModelConfig& cfg, std::size_t n) {
  const std::size_t C = cfg.channels();
  TptBlockParams p;
  p.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    p.down.push_back({NormParams::unit(C, cfg.bn_epsilon), make_conv(rng, C, C, {2, 1, 1}, {2, 1, 1})});
  }
  p.attn_norm = NormParams::unit(C, cfg.bn_epsilon);
  p.attention = AttentionParams::random(rng, cfg.attention);
  p.ffn_norm = NormParams::unit(C, cfg.bn_epsilon);
  p.ffn = FeedForwardParams::random(rng, C, cfg.ffn_ratio, cfg.bn_epsilon);
  for (std::size_t i = 0; i < n; ++i) {
    ConvParams up = make_conv(rng, C, C, {2, 1, 1}, {2, 1, 1});
    p.up.push_back(std::move(up));
  }
  return p;
}

ModelWeights init_weights(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelWeights w;
  w.stem = StemParams::random(rng, cfg.stem_channels, cfg.channels());
  w.stem.stem1_norm.epsilon = cfg.bn_epsilon;
  w.stem.stem2_norm.epsilon = cfg.bn_epsilon;
  w.stem.alpha = cfg.alpha;
  w.stem.beta = cfg.beta;
  w.embed = PatchEmbedParams::random(rng, cfg.channels());
  for (auto n : cfg.stages) w.blocks.push_back(TptBlockParams::random(rng, cfg, n));
  const std::size_t hidden = cfg.hidden_width();
  w.head.fc1 = make_dense(rng, cfg.channels(), hidden);
  w.head.bias1.assign(hidden, 0.0);
  w.head.fc2 = make_dense(rng, hidden, 1);
  w.head.bias2.assign(1, 0.0);
  return w;
}

namespace {

template <typename Weights, typename Fn>
void visit_all(Weights& w, Fn&& fn) {
  auto vec = [&](const std::string& name, auto& v) {
    if (!v.empty()) fn(name, Shape{v.size()}, std::span(v));
  };
  auto tensor = [&](const std::string& name, auto& t) { fn(name, t.shape(), t.data()); };
  auto conv = [&](const std::string& name, auto& c) {
    tensor(name + ".weight", c.weight);
    vec(name + ".bias", c.bias);
  };
  auto norm = [&](const std::string& name, auto& n) {
    vec(name + ".gamma", n.gamma);
    vec(name + ".beta", n.beta);
  };

  conv("stem.stem1_diff", w.stem.stem1_diff);
  conv("stem.stem1_raw", w.stem.stem1_raw);
  norm("stem.stem1_norm", w.stem.stem1_norm);
  conv("stem.stem2", w.stem.stem2);
  norm("stem.stem2_norm", w.stem.stem2_norm);
  conv("embed.proj", w.embed.proj);
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    auto& blk = w.blocks[b];
    const std::string prefix = "blocks." + std::to_string(b);
    for (std::size_t i = 0; i < blk.down.size(); ++i) {
      norm(prefix + ".down." + std::to_string(i) + ".norm", blk.down[i].norm);
      conv(prefix + ".down." + std::to_string(i) + ".conv", blk.down[i].conv);
    }
    norm(prefix + ".attn_norm", blk.attn_norm);
    conv(prefix + ".attention.q_proj", blk.attention.q_proj);
    conv(prefix + ".attention.k_proj", blk.attention.k_proj);
    conv(prefix + ".attention.v_proj", blk.attention.v_proj);
    conv(prefix + ".attention.lce", blk.attention.lce);
    conv(prefix + ".attention.out_proj", blk.attention.out_proj);
    norm(prefix + ".ffn_norm", blk.ffn_norm);
    conv(prefix + ".ffn.fc1", blk.ffn.fc1);
    conv(prefix + ".ffn.hidden", blk.ffn.hidden);
    norm(prefix + ".ffn.hidden_norm", blk.ffn.hidden_norm);
    conv(prefix + ".ffn.fc2", blk.ffn.fc2);
    for (std::size_t i = 0; i < blk.up.size(); ++i) conv(prefix + ".up." + std::to_string(i), blk.up[i]);
  }
  tensor("head.fc1.weight", w.head.fc1);
  vec("head.fc1.bias", w.head.bias1);
  tensor("head.fc2.weight", w.head.fc2);
  vec("head.fc2.bias", w.head.bias2);
}

std::size_t stage_divisor(std::size_t n) { return std::size_t{1} << n; }

}  // namespace

void for_each_parameter(ModelWeights& w,
                        const std::function<void(const std::string&, const Shape&, std::span<double>)>& fn) {
  visit_all(w, fn);
}

void for_each_parameter(const ModelWeights& w,
                        const std::function<void(const std::string&, const Shape&, std::span<const double>)>& fn) {
  visit_all(w, fn);
}

Tensor temporal_downsample(const Tensor& x, const DownSampler& p) {
  require_rank(x, 4, "temporal_downsample input");
  if (x.dim(1) % 2 != 0) {
    throw ShapeError("temporal_downsample: frame count " + std::to_string(x.dim(1)) + " is odd");
  }
  if (p.conv.kernel() != Triple{2, 1, 1} || p.conv.stride != Triple{2, 1, 1}) {
    throw ShapeError("temporal_downsample: expects a (2,1,1) kernel with (2,1,1) stride");
  }
  return conv3d(batch_norm(x, p.norm), p.conv);
}

Tensor temporal_upsample(const Tensor& x, const ConvParams& p) { return conv_transpose_temporal(x, p); }

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  Tensor h = conv3d(x, p.fc1);
  h = batch_norm(conv3d(h, p.hidden), p.hidden_norm);
  if (!p.bypass_gelu) h = gelu(std::move(h));
  return conv3d(h, p.fc2);
}

Tensor tpt_block_forward(const Tensor& x, const TptBlockParams& p, const AttentionConfig& cfg, AttentionTrace* trace,
                         const BlockLayout& layout) {
  require_rank(x, 4, "tpt block input");
  if (p.down.size() != p.n || p.up.size() != p.n) {
    throw std::invalid_argument("tpt block: sampler count does not match sampling coefficient");
  }
  if (x.dim(1) % stage_divisor(p.n) != 0) {
    throw ShapeError("tpt block: " + std::to_string(x.dim(1)) + " frames not divisible by 2^" + std::to_string(p.n));
  }
  Tensor h = x;
  for (const auto& d : p.down) h = temporal_downsample(h, d);
  if (layout.pre_norm) {
    h += mhsa_forward(batch_norm(h, p.attn_norm), cfg, p.attention, p.n, trace);
    h += feed_forward(batch_norm(h, p.ffn_norm), p.ffn);
  } else {
    h = batch_norm(h + mhsa_forward(h, cfg, p.attention, p.n, trace), p.attn_norm);
    h = batch_norm(h + feed_forward(h, p.ffn), p.ffn_norm);
  }
  for (const auto& u : p.up) h = temporal_upsample(h, u);
  return layout.block_residual ? x + h : h;
}

std::vector<double> predictor_head(const Tensor& x, const HeadParams& p) {
  const Tensor pooled = spatial_mean(x);  // [C, T]
  const std::size_t C = pooled.dim(0), T = pooled.dim(1);
  Tensor rows({T, C});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) rows[t * C + c] = pooled[c * T + t];
  }
  const Tensor hidden = gelu(linear_rows(rows, p.fc1, p.bias1));
  const Tensor out = linear_rows(hidden, p.fc2, p.bias2);
  return out.values();
}

BvpSignal model_forward(const VideoClip& clip, const ModelConfig& cfg, const ModelWeights& w, ForwardTrace* trace) {
  cfg.validate();
  clip.validate();
  if (clip.height() % 16 != 0 || clip.width() % 16 != 0) {
    throw ShapeError("model: frame size " + std::to_string(clip.height()) + "x" + std::to_string(clip.width()) +
                     " must be divisible by 16");
  }
  if (clip.frame_count() % stage_divisor(cfg.max_sampling()) != 0) {
    throw ShapeError("model: " + std::to_string(clip.frame_count()) + " frames not divisible by 2^" +
                     std::to_string(cfg.max_sampling()));
  }
  if (w.blocks.size() != cfg.stages.size()) throw std::invalid_argument("model: weights do not match stage schedule");
  if (trace != nullptr && trace->stage >= cfg.stages.size()) {
    throw std::out_of_range("model: trace stage " + std::to_string(trace->stage) + " does not exist");
  }

  Tensor x = patch_embed(fusion_stem_forward(clip, w.stem), w.embed);
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    AttentionTrace* t = (trace != nullptr && trace->stage == b) ? &trace->attention : nullptr;
    x = tpt_block_forward(x, w.blocks[b], cfg.attention, t, cfg.layout);
  }
  return BvpSignal{predictor_head(x, w.head), clip.fps};
}

ModelSummary model_summary(const ModelConfig& cfg, Triple input) {
  cfg.validate();
  const auto [T, H, W] = input;
  if (H % 16 != 0 || W % 16 != 0) throw ShapeError("model_summary: spatial input must be divisible by 16");
  const ModelWeights weights = init_weights(cfg);

  std::map<std::string, std::uint64_t> params;
  for_each_parameter(weights, [&](const std::string& name, const Shape&, std::span<const double> v) {
    std::string group = name.substr(0, name.find('.'));
    if (group == "blocks") group = name.substr(0, name.find('.', 7));
    params[group] += v.size();
  });

  using U = std::uint64_t;
  const U C = cfg.channels(), C1 = cfg.stem_channels;
  const U H1 = (H + 4 - 5) / 2 + 1, W1 = (W + 4 - 5) / 2 + 1;
  const U H2 = H1 / 2, W2 = W1 / 2;
  const U S = H2 / 4, S2 = W2 / 4;

  ModelSummary summary;
  U stem_macs = C1 * 3 * 25 * T * H1 * W1 + C * C1 * 9 * T * H2 * W2;
  if (cfg.beta != 0.0) stem_macs += C1 * 12 * 25 * T * H1 * W1 + C * C1 * 9 * T * H2 * W2;
  summary.breakdown.push_back({"stem", params["stem"], stem_macs});
  summary.breakdown.push_back({"embed", params["embed"], C * C * 16 * T * S * S2});

  for (std::size_t b = 0; b < cfg.stages.size(); ++b) {
    const std::size_t n = cfg.stages[b];
    if (T % stage_divisor(n) != 0) throw ShapeError("model_summary: frames not divisible by 2^n");
    const U plane = S * S2;
    const U t_ds = T / stage_divisor(n);
    const U tokens = t_ds * plane;
    U macs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const U t_out = T / stage_divisor(i + 1);
      macs += 2 * C * C * t_out * plane;  // down-sampler
      macs += 2 * C * C * t_out * plane;  // matching up-sampler
    }
    const RegionGrid grid = make_region_grid({static_cast<std::size_t>(t_ds), static_cast<std::size_t>(S),
                                              static_cast<std::size_t>(S2)},
                                             cfg.attention.partition, n);
    const U R = grid.region_count();
    const U k = cfg.attention.resolve_topk(grid.region_count());
    macs += 2 * C * C * 27 * tokens;  // TDC Q/K
    if (cfg.attention.tdc_theta != 0.0) macs += 2 * C * C * tokens;
    macs += 2 * C * C * tokens;  // V and output projections
    macs += C * 27 * tokens;     // LCE
    macs += R * R * C;           // region affinities
    macs += 2 * tokens * (k * tokens / R) * C;
    const U hidden = C * cfg.ffn_ratio;
    macs += 2 * C * hidden * tokens + hidden * 27 * tokens;
    const std::string name = "blocks." + std::to_string(b);
    summary.breakdown.push_back({name, params[name], macs});
  }
  const U hidden = cfg.hidden_width();
  summary.breakdown.push_back({"head", params["head"], T * (C * hidden + hidden)});

  for (const auto& e : summary.breakdown) {
    summary.parameters += e.parameters;
    summary.macs += e.macs;
  }
  return summary;
}

}  // namespace rhythm
