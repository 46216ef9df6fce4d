#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rhythm/model.hpp"

using namespace rhythm;

namespace {

ModelConfig small_config(std::vector<std::size_t> stages) {
  ModelConfig cfg;
  cfg.stages = std::move(stages);
  cfg.stem_channels = 4;
  cfg.attention.channels = 8;
  cfg.attention.heads = 2;
  cfg.attention.head_dim = 4;
  return cfg;
}

Tensor gelu_oracle(Tensor x) {
  for (auto& v : x.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return x;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rhythm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("temporal down- and up-sampling") {
    DownSampler d;
    d.norm = NormParams::unit(1);
    d.norm.identity = true;
    d.conv.weight = Tensor({1, 1, 2, 1, 1}, 0.5);
    d.conv.bias = {0.0};
    d.conv.stride = {2, 1, 1};
    const Tensor x({1, 6, 1, 1}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(temporal_downsample(x, d).values() == std::vector<double>{1.5, 3.5, 5.5});
    CHECK_THROWS_AS(temporal_downsample(Tensor({1, 5, 1, 1}), d), ShapeError);

    ConvParams u;
    u.weight = Tensor({1, 1, 2, 1, 1}, 1.0);
    u.stride = {2, 1, 1};
    CHECK(temporal_upsample(Tensor({1, 3, 1, 1}, std::vector<double>{1.5, 3.5, 5.5}), u).values() ==
          std::vector<double>{1.5, 1.5, 3.5, 3.5, 5.5, 5.5});

    Rng rng(1);
    const ModelConfig cfg = small_config({2});
    const TptBlockParams blk = TptBlockParams::random(rng, cfg, 2);
    Tensor h = oracle::random_tensor(rng, {8, 16, 4, 4});
    for (const auto& s : blk.down) h = temporal_downsample(h, s);
    CHECK(h.shape() == Shape{8, 4, 4, 4});
    for (const auto& s : blk.up) h = temporal_upsample(h, s);
    CHECK(h.shape() == Shape{8, 16, 4, 4});
  }

  TEST_CASE("feed-forward matches its oracle") {
    Rng rng(2);
    FeedForwardParams p = FeedForwardParams::random(rng, 4, 2, 1e-5);
    for (auto& g : p.hidden_norm.gamma) g = rng.uniform(0.5, 1.5);
    const Tensor x = oracle::random_tensor(rng, {4, 4, 5, 5});
    const Tensor h = oracle::batch_norm(oracle::conv3d(oracle::conv3d(x, p.fc1), p.hidden), p.hidden_norm);
    const Tensor expect = oracle::conv3d(gelu_oracle(h), p.fc2);
    const Tensor y = feed_forward(x, p);
    CHECK(y.shape() == x.shape());
    CHECK(oracle::rel_err(y, expect) < 1e-10);
  }

  TEST_CASE("TPT blocks preserve shape for every sampling coefficient") {
    Rng rng(3);
    const ModelConfig cfg = small_config({1});
    const Tensor x = oracle::random_tensor(rng, {8, 64, 4, 4});
    for (std::size_t n : {1, 2, 3}) {
      const TptBlockParams p = TptBlockParams::random(rng, cfg, n);
      CAPTURE(n);
      CHECK(tpt_block_forward(x, p, cfg.attention).shape() == x.shape());
    }
    const TptBlockParams p3 = TptBlockParams::random(rng, cfg, 3);
    CHECK_THROWS_AS(tpt_block_forward(oracle::random_tensor(rng, {8, 12, 4, 4}), p3, cfg.attention), ShapeError);
  }

  TEST_CASE("TPT block composition") {
    Rng rng(4);
    const ModelConfig cfg = small_config({2});
    TptBlockParams p = TptBlockParams::random(rng, cfg, 2);
    for (auto& u : p.up)
      for (auto& b : u.bias) b = rng.uniform(-0.2, 0.2);
    const Tensor x = oracle::random_tensor(rng, {8, 32, 4, 4});

    Tensor h = x;
    for (const auto& d : p.down) h = oracle::conv3d(oracle::batch_norm(h, d.norm), d.conv);
    h += mhsa_forward(oracle::batch_norm(h, p.attn_norm), cfg.attention, p.attention, 2);
    h += feed_forward(oracle::batch_norm(h, p.ffn_norm), p.ffn);
    for (const auto& u : p.up) h = temporal_upsample(h, u);
    Tensor expect = x;
    expect += h;
    CHECK(oracle::rel_err(tpt_block_forward(x, p, cfg.attention), expect) < 1e-10);

    // With the attention output, FFN output and up-samplers silenced the block is the identity.
    for (auto& w : p.attention.out_proj.weight.values()) w = 0.0;
    for (auto& w : p.ffn.fc2.weight.values()) w = 0.0;
    for (auto& u : p.up) {
      for (auto& w : u.weight.values()) w = 0.0;
      for (auto& b : u.bias) b = 0.0;
    }
    CHECK(tpt_block_forward(x, p, cfg.attention) == x);
  }

  TEST_CASE("TPT block layout variants") {
    Rng rng(12);
    const ModelConfig cfg = small_config({1});
    const TptBlockParams p = TptBlockParams::random(rng, cfg, 1);
    const Tensor x = oracle::random_tensor(rng, {8, 16, 4, 4});

    Tensor h = x;
    for (const auto& d : p.down) h = temporal_downsample(h, d);
    Tensor a = h;
    a += mhsa_forward(h, cfg.attention, p.attention, 1);
    h = oracle::batch_norm(a, p.attn_norm);
    Tensor f = h;
    f += feed_forward(h, p.ffn);
    h = oracle::batch_norm(f, p.ffn_norm);
    for (const auto& u : p.up) h = temporal_upsample(h, u);
    CHECK(oracle::rel_err(tpt_block_forward(x, p, cfg.attention, nullptr, {false, false}), h) < 1e-10);
    Tensor skip = x;
    skip += h;
    CHECK(oracle::rel_err(tpt_block_forward(x, p, cfg.attention, nullptr, {false, true}), skip) < 1e-10);

    // Dropping only the block skip removes exactly the input.
    Tensor inner = tpt_block_forward(x, p, cfg.attention);
    for (std::size_t i = 0; i < inner.size(); ++i) inner[i] -= x[i];
    CHECK(oracle::rel_err(tpt_block_forward(x, p, cfg.attention, nullptr, {true, false}), inner) < 1e-12);
  }

  TEST_CASE("predictor head") {
    Rng rng(5);
    HeadParams p;
    p.fc1 = oracle::random_tensor(rng, {3, 4});
    p.bias1 = {0.1, -0.2, 0.3};
    p.fc2 = oracle::random_tensor(rng, {1, 3});
    p.bias2 = {0.05};
    const Tensor x = oracle::random_tensor(rng, {4, 6, 2, 3});
    const std::vector<double> y = predictor_head(x, p);
    REQUIRE(y.size() == 6);
    for (std::size_t t = 0; t < 6; ++t) {
      double m[4];
      for (std::size_t c = 0; c < 4; ++c) {
        m[c] = 0.0;
        for (std::size_t s = 0; s < 6; ++s) m[c] += x.at(c, t, s / 3, s % 3);
        m[c] /= 6.0;
      }
      double out = p.bias2[0];
      for (std::size_t j = 0; j < 3; ++j) {
        double a = p.bias1[j];
        for (std::size_t c = 0; c < 4; ++c) a += p.fc1[j * 4 + c] * m[c];
        out += p.fc2[j] * 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
      }
      CHECK(y[t] == doctest::Approx(out).epsilon(1e-12));
    }
  }

  TEST_CASE("model forward shapes and determinism") {
    Rng rng(6);
    const VideoClip clip = oracle::random_clip(rng, 64, 64, 64);
    for (const auto& stages : std::vector<std::vector<std::size_t>>{{1, 2, 3}, {3, 2, 1}, {2}}) {
      ModelConfig cfg = small_config(stages);
      cfg.seed = 9;
      const ModelWeights w = init_weights(cfg);
      const BvpSignal a = model_forward(clip, cfg, w);
      CHECK(a.samples.size() == 64);
      CHECK(a.fs == 30.0);
      for (double v : a.samples) CHECK(std::isfinite(v));
      CHECK(model_forward(clip, cfg, init_weights(cfg)).samples == a.samples);
      cfg.seed = 10;
      CHECK(model_forward(clip, cfg, init_weights(cfg)).samples != a.samples);
    }

    const ModelConfig cfg = small_config({1});
    const ModelWeights w = init_weights(cfg);
    CHECK_THROWS_AS(model_forward(oracle::random_clip(rng, 16, 72, 72), cfg, w), ShapeError);
    CHECK_THROWS_AS(model_forward(oracle::random_clip(rng, 15, 64, 64), cfg, w), ShapeError);
    ForwardTrace bad{3, {}};
    CHECK_THROWS_AS(model_forward(oracle::random_clip(rng, 16, 64, 64), cfg, w, &bad), std::out_of_range);

    ForwardTrace trace{0, {}};
    trace.attention.query_token = 5;
    model_forward(oracle::random_clip(rng, 16, 64, 64), cfg, w, &trace);
    CHECK(trace.attention.scores.shape() == Shape{64, 64});
    CHECK(trace.attention.routes.k == 16);
  }

  TEST_CASE("summary counts") {
    const ModelConfig cfg = small_config({1, 2, 3});
    const ModelWeights w = init_weights(cfg);
    std::uint64_t total = 0;
    for_each_parameter(w, [&](const std::string&, const Shape&, std::span<const double> v) { total += v.size(); });
    const ModelSummary s = model_summary(cfg, {64, 64, 64});
    CHECK(s.parameters == total);
    CHECK(s.macs > 0);
    std::uint64_t macs = 0;
    for (const auto& e : s.breakdown) {
      CHECK(e.macs > 0);
      macs += e.macs;
    }
    CHECK(macs == s.macs);

    // Patch embedding is a dense 4x4 conv: C*C*16 MACs per output voxel.
    const ModelSummary d = model_summary(ModelConfig{}, {160, 128, 128});
    CHECK(d.breakdown[1].name == "embed");
    CHECK(d.breakdown[1].macs == 64ull * 64 * 16 * 160 * 8 * 8);
    CHECK(d.parameters > 300'000);
    CHECK(d.parameters < 30'000'000);
  }

  TEST_CASE("config text round trip") {
    ModelConfig cfg = small_config({3, 1});
    cfg.attention.tdc_theta = 0.25;
    cfg.seed = 77;
    const std::string text = format_model_config(cfg);
    const ModelConfig back = parse_model_config(text);
    CHECK(format_model_config(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(back.stages == std::vector<std::size_t>{3, 1});
    cfg.layout = {false, false};
    const ModelConfig post = parse_model_config(format_model_config(cfg));
    CHECK_FALSE(post.layout.pre_norm);
    CHECK_FALSE(post.layout.block_residual);
    CHECK(config_hash(post) != config_hash(back));
    cfg.layout = {};
    CHECK_THROWS_AS(parse_model_config("[model]\nnorm_placement = middle\n"), std::invalid_argument);
    CHECK(config_hash(cfg).size() == 16);
    cfg.seed = 78;
    CHECK(config_hash(cfg) != config_hash(back));

    CHECK(parse_model_config("[model]\nstages = 2\n").stages == std::vector<std::size_t>{2});
    CHECK_THROWS_AS(parse_model_config("[model]\nbogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_model_config("[model]\nstages = 1,x\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_model_config("[extra]\nseed = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_model_config("[model]\nchannels = 60\n").validate(), std::invalid_argument);

    CHECK(text_hash("") == "cbf29ce484222325");
    CHECK(text_hash("a") == "af63dc4c8601ec8c");
  }

  TEST_CASE("checkpoint round trip") {
    const auto dir = scratch_dir("ckpt");
    ModelConfig cfg = small_config({1, 2});
    cfg.seed = 3;
    const ModelWeights w = init_weights(cfg);
    write_checkpoint(dir / "w.json", w, cfg);
    const ModelWeights back = read_checkpoint(dir / "w.json", cfg);
    std::vector<double> a, b;
    for_each_parameter(w, [&](const std::string&, const Shape&, std::span<const double> v) { a.insert(a.end(), v.begin(), v.end()); });
    for_each_parameter(back, [&](const std::string&, const Shape&, std::span<const double> v) { b.insert(b.end(), v.begin(), v.end()); });
    CHECK(a == b);

    Rng rng(8);
    const VideoClip clip = oracle::random_clip(rng, 16, 64, 64);
    CHECK(model_forward(clip, cfg, back).samples == model_forward(clip, cfg, w).samples);

    CHECK_THROWS(read_checkpoint(dir / "w.json", small_config({1})));
    CHECK_THROWS(read_checkpoint(dir / "missing.json", cfg));
    std::filesystem::remove_all(dir);
  }
}
