#include "rhythm/attention.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rhythm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

// [d, T, S, S'] channel-major volume -> [tokens, d] token-major matrix.
RowMatrix token_major(const Tensor& x) {
  const auto d = static_cast<Eigen::Index>(x.dim(0));
  const auto n = static_cast<Eigen::Index>(x.size() / x.dim(0));
  return ConstRowMap(x.data().data(), d, n).transpose();
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

void AttentionConfig::validate() const {
  if (heads == 0 || head_dim == 0) throw std::invalid_argument("attention: heads and head_dim must be >= 1");
  if (channels != heads * head_dim) {
    throw std::invalid_argument("attention: channels (" + std::to_string(channels) + ") != heads * head_dim (" +
                                std::to_string(heads) + " * " + std::to_string(head_dim) + ")");
  }
  if (tdc_theta < 0.0 || tdc_theta > 1.0) throw std::invalid_argument("attention: tdc_theta must lie in [0, 1]");
}

std::size_t AttentionConfig::resolve_topk(std::size_t regions) const {
  const std::size_t k = topk == 0 ? std::max<std::size_t>(1, ceil_div(regions, 4)) : topk;
  if (k > regions) {
    throw std::invalid_argument("attention: topk " + std::to_string(k) + " exceeds region count " +
                                std::to_string(regions));
  }
  return k;
}

RegionGrid::RegionGrid(Triple tokens, Triple window) : tokens_(tokens), window_(window) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (window[a] == 0 || window[a] > tokens[a]) throw ShapeError("region grid: window does not fit token grid");
    regions_[a] = ceil_div(tokens[a], window[a]);
  }
  members_.resize(region_count());
  for (std::size_t t = 0; t < tokens_[0]; ++t) {
    for (std::size_t h = 0; h < tokens_[1]; ++h) {
      for (std::size_t w = 0; w < tokens_[2]; ++w) {
        const std::size_t token = (t * tokens_[1] + h) * tokens_[2] + w;
        members_[region_of(token)].push_back(token);
      }
    }
  }
}

std::size_t RegionGrid::region_of(std::size_t token) const {
  const std::size_t w = token % tokens_[2];
  const std::size_t h = (token / tokens_[2]) % tokens_[1];
  const std::size_t t = token / (tokens_[1] * tokens_[2]);
  return ((t / window_[0]) * regions_[1] + h / window_[1]) * regions_[2] + w / window_[2];
}

Tensor tdc_project(const Tensor& x, const ConvParams& p) {
  require_rank(p.weight, 5, "tdc_project weight");
  if (p.kernel() != Triple{3, 3, 3} || p.stride != Triple{1, 1, 1} || p.padding != Triple{1, 1, 1} ||
      p.groups != 1) {
    throw ShapeError("tdc_project: expects a dense 3x3x3 kernel with stride 1 and padding 1");
  }
  Tensor y = conv3d(x, p);
  if (p.theta == 0.0) return y;

  // Summed taps of the t-1 and t+1 planes form a pointwise kernel on the centre value.
  const std::size_t cout = p.out_channels(), cin = p.in_channels();
  ConvParams diff;
  diff.weight = Tensor({cout, cin, 1, 1, 1});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < cin; ++i) {
      double acc = 0.0;
      for (std::size_t kt : {std::size_t{0}, std::size_t{2}}) {
        for (std::size_t tap = 0; tap < 9; ++tap) acc += p.weight[((o * cin + i) * 3 + kt) * 9 + tap];
      }
      diff.weight[o * cin + i] = acc;
    }
  }
  y += (-p.theta) * conv3d(x, diff);
  return y;
}

RegionGrid make_region_grid(Triple tokens, std::size_t partition, std::size_t n) {
  const std::size_t temporal_parts = std::size_t{1} << std::max(partition, n);
  const Triple window{tokens[0] / temporal_parts, tokens[1] / 4, tokens[2] / 4};
  if (window[0] == 0) {
    throw ShapeError("region_pool: " + std::to_string(tokens[0]) + " frames cannot be split into " +
                     std::to_string(temporal_parts) + " temporal parts");
  }
  if (window[1] == 0 || window[2] == 0) throw ShapeError("region_pool: spatial token grid must be at least 4x4");
  return RegionGrid(tokens, window);
}

PooledRegions region_pool(const Tensor& x, std::size_t partition, std::size_t n) {
  require_rank(x, 4, "region_pool input");
  RegionGrid grid = make_region_grid({x.dim(1), x.dim(2), x.dim(3)}, partition, n);
  const Tensor pooled = pool(x, PoolKind::kAvg, grid.window(), grid.window());
  const std::size_t C = x.dim(0), R = grid.region_count();
  Tensor features({R, C});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < R; ++r) features[r * C + c] = pooled[c * R + r];
  }
  return {std::move(features), std::move(grid)};
}

Tensor pre_attention_scores(const Tensor& q_pooled, const Tensor& k_pooled) {
  require_rank(q_pooled, 2, "pre_attention_scores queries");
  require_rank(k_pooled, 2, "pre_attention_scores keys");
  if (q_pooled.dim(1) != k_pooled.dim(1)) throw ShapeError("pre_attention_scores: feature widths differ");
  return linear_rows(q_pooled, k_pooled, {});
}

RoutingTable topk_route(const Tensor& scores, std::size_t k) {
  require_rank(scores, 2, "topk_route scores");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  if (k == 0 || k > cols) {
    throw std::invalid_argument("topk_route: k=" + std::to_string(k) + " outside [1, " + std::to_string(cols) + "]");
  }
  RoutingTable table;
  table.k = k;
  table.indices.reserve(rows * k);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = scores.data().data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    table.indices.insert(table.indices.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return table;
}

Tensor refined_attention(const Tensor& q, const Tensor& k, const Tensor& v, const RoutingTable& routes,
                         const RegionGrid& grid, const ConvParams* lce, AttentionProbe* probe) {
  require_rank(q, 4, "refined_attention Q");
  if (k.shape() != q.shape() || v.shape() != q.shape()) throw ShapeError("refined_attention: Q/K/V shapes differ");
  const Triple tokens{q.dim(1), q.dim(2), q.dim(3)};
  if (grid.tokens() != tokens) throw ShapeError("refined_attention: region grid does not match token volume");
  if (routes.rows() != grid.region_count()) {
    throw ShapeError("refined_attention: routing table has " + std::to_string(routes.rows()) + " rows for " +
                     std::to_string(grid.region_count()) + " regions");
  }
  for (auto idx : routes.indices) {
    if (idx >= grid.region_count()) throw ShapeError("refined_attention: routed region index out of range");
  }

  const std::size_t d = q.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const RowMatrix qm = token_major(q);
  const RowMatrix km = token_major(k);
  const RowMatrix vm = token_major(v);
  RowMatrix out = RowMatrix::Zero(qm.rows(), qm.cols());

  std::vector<std::size_t> kv_tokens;
  RowMatrix qr, kg, vg, weights;
  for (std::size_t r = 0; r < grid.region_count(); ++r) {
    const auto& queries = grid.members(r);
    kv_tokens.clear();
    for (auto region : routes.row(r)) {
      const auto& m = grid.members(region);
      kv_tokens.insert(kv_tokens.end(), m.begin(), m.end());
    }
    const auto nq = static_cast<Eigen::Index>(queries.size());
    const auto nkv = static_cast<Eigen::Index>(kv_tokens.size());
    qr.resize(nq, static_cast<Eigen::Index>(d));
    kg.resize(nkv, static_cast<Eigen::Index>(d));
    vg.resize(nkv, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < nq; ++i) qr.row(i) = qm.row(static_cast<Eigen::Index>(queries[i]));
    for (Eigen::Index j = 0; j < nkv; ++j) {
      kg.row(j) = km.row(static_cast<Eigen::Index>(kv_tokens[j]));
      vg.row(j) = vm.row(static_cast<Eigen::Index>(kv_tokens[j]));
    }
    weights.noalias() = (qr * kg.transpose()) * scale;
    for (Eigen::Index i = 0; i < nq; ++i) {
      softmax_inplace(std::span<double>(weights.row(i).data(), static_cast<std::size_t>(nkv)));
    }
    const RowMatrix attended = weights * vg;
    for (Eigen::Index i = 0; i < nq; ++i) out.row(static_cast<Eigen::Index>(queries[i])) = attended.row(i);

    if (probe != nullptr && grid.region_of(probe->query_token) == r) {
      const auto pos = std::find(queries.begin(), queries.end(), probe->query_token) - queries.begin();
      probe->key_tokens = kv_tokens;
      probe->weights.assign(weights.row(pos).data(), weights.row(pos).data() + nkv);
      probe->captured = true;
    }
  }

  Tensor result(q.shape());
  Eigen::Map<RowMatrix>(result.data().data(), static_cast<Eigen::Index>(d), out.rows()) = out.transpose();
  if (lce != nullptr) result += conv3d(v, *lce);
  return result;
}

ConvParams depthwise_slice(const ConvParams& p, std::size_t begin, std::size_t count) {
  if (p.groups != p.out_channels() || p.weight.dim(1) != 1) {
    throw std::invalid_argument("depthwise_slice: convolution is not depthwise");
  }
  ConvParams s = p;
  s.weight = p.weight.channel_slice(begin, count);
  if (!p.bias.empty()) {
    s.bias.assign(p.bias.begin() + static_cast<std::ptrdiff_t>(begin),
                  p.bias.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  s.groups = count;
  return s;
}

AttentionParams AttentionParams::random(Rng& rng, const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t C = cfg.channels;
  AttentionParams p;
  p.q_proj = make_conv(rng, C, C, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 1, false);
  p.q_proj.theta = cfg.tdc_theta;
  p.k_proj = make_conv(rng, C, C, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 1, false);
  p.k_proj.theta = cfg.tdc_theta;
  p.v_proj = make_conv(rng, C, C, {1, 1, 1});
  p.lce = make_conv(rng, C, C, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, C);
  p.out_proj = make_conv(rng, C, C, {1, 1, 1});
  return p;
}

Tensor mhsa_forward(const Tensor& x, const AttentionConfig& cfg, const AttentionParams& p, std::size_t n,
                    AttentionTrace* trace) {
  cfg.validate();
  require_rank(x, 4, "mhsa input");
  if (x.dim(0) != cfg.channels) {
    throw ShapeError("mhsa: input has " + std::to_string(x.dim(0)) + " channels, config expects " +
                     std::to_string(cfg.channels));
  }
  const Tensor q = tdc_project(x, p.q_proj);
  const Tensor k = tdc_project(x, p.k_proj);
  const Tensor v = conv3d(x, p.v_proj);

  PooledRegions qp = region_pool(q, cfg.partition, n);
  const PooledRegions kp = region_pool(k, cfg.partition, n);
  Tensor scores = pre_attention_scores(qp.features, kp.features);
  RoutingTable routes = topk_route(scores, cfg.resolve_topk(qp.grid.region_count()));

  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  if (trace != nullptr) trace->head_probes.assign(cfg.heads, AttentionProbe{trace->query_token, false, {}, {}});
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t begin = h * cfg.head_dim;
    const ConvParams lce = depthwise_slice(p.lce, begin, cfg.head_dim);
    heads.push_back(refined_attention(q.channel_slice(begin, cfg.head_dim), k.channel_slice(begin, cfg.head_dim),
                                      v.channel_slice(begin, cfg.head_dim), routes, qp.grid, &lce,
                                      trace != nullptr ? &trace->head_probes[h] : nullptr));
  }
  Tensor out = conv3d(concat_channels(heads), p.out_proj);

  if (trace != nullptr) {
    trace->scores = std::move(scores);
    trace->routes = std::move(routes);
    trace->grid = std::move(qp.grid);
  }
  return out;
}

}  // namespace rhythm
