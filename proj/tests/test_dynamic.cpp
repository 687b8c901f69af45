// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "depthvar/dynamic.hpp"
#include "oracles.hpp"

using namespace depthvar;

namespace {

struct Fixture {
  ToyVarModel model;
  FeatureGrid f_prev;
  FeatureGrid cond;
  LayerCache cache;
  ScaleStep step;
};

// Previous scale 2x2, current scale 4x4, final resolution 4x4.
Fixture make_fixture(int layers, std::uint64_t seed) {
  Fixture fx;
  fx.model = init_model(seed, layers, 8, 16);
  std::mt19937_64 rng(seed + 100);
  fx.f_prev = oracle::random_grid(rng, 4, 4, 8, 0.5);
  fx.cond = condition_map(fx.model, seed);
  std::vector<FeatureGrid> states = {oracle::random_grid(rng, 2, 2, 8)};
  for (int b = 0; b < layers; ++b) states.push_back(states.back() + oracle::random_grid(rng, 2, 2, 8, 0.1));
  fx.cache = LayerCache::from_states(1, states);
  fx.step = {2, 4, 4};
  return fx;
}

DepthMap random_depths(std::mt19937_64& rng, int h, int w, int layers) {
  std::uniform_int_distribution<int> d(0, layers);
  DepthMap out(h, w);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = d(rng);
  return out;
}

FeatureGrid proxy_sum(const Fixture& fx, int blocks) {
  FeatureGrid x = embed_input(fx.model, fx.f_prev, fx.step, fx.cond);
  for (int b = 0; b < blocks; ++b) x += oracle::resize(fx.cache.block_delta(b), 4, 4);
  return x;
}

}  // namespace

TEST_CASE("layer cache telescopes back to the final state") {
  std::mt19937_64 rng(1);
  std::vector<FeatureGrid> states;
  for (int i = 0; i < 6; ++i) states.push_back(oracle::random_grid(rng, 3, 2, 4));
  const LayerCache cache = LayerCache::from_states(4, states);
  CHECK(cache.num_blocks() == 5);
  CHECK(cache.scale_index() == 4);
  CHECK(cache.embedding() == states[0]);
  CHECK(cache.block_delta(2) == states[3] - states[2]);
  CHECK(max_abs_difference(cache.reconstruct().data(), states.back().data()) <= 1e-12);
  CHECK_THROWS_AS(cache.block_delta(5), std::out_of_range);
  CHECK_THROWS_AS(LayerCache::from_states(0, {}), std::invalid_argument);
}

TEST_CASE("masked inference with an all-ones mask is the dense forward") {
  const Fixture fx = make_fixture(4, 1);
  const ScaleOutput dense = full_scale_inference(fx.model, fx.f_prev, fx.step, fx.cond);
  const ScaleOutput masked =
      masked_scale_inference(fx.model, fx.f_prev, LayerMask(4, 4, 4, true), fx.cache, fx.step, fx.cond);
  CHECK(masked.states == dense.states);
  CHECK(masked.logits == dense.logits);
  CHECK(masked.codes == dense.codes);
}

TEST_CASE("masked inference with an all-zeros mask follows the proxy path") {
  const Fixture fx = make_fixture(4, 2);
  const ScaleOutput out =
      masked_scale_inference(fx.model, fx.f_prev, LayerMask(4, 4, 4, false), fx.cache, fx.step, fx.cond);
  for (int b = 0; b <= 4; ++b) {
    CHECK(max_abs_difference(out.states[static_cast<std::size_t>(b)].data(), proxy_sum(fx, b).data()) <= 1e-12);
  }
}

TEST_CASE("masked inference matches the per-token trajectory evaluator") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    const Fixture fx = make_fixture(8, 10 + static_cast<std::uint64_t>(trial));
    const DepthMap depths = random_depths(rng, 4, 4, 8);
    const MaskStrategy strategy = trial % 2 ? MaskStrategy::uniform : MaskStrategy::bit_reversal;
    const ScaleOutput out = masked_scale_inference(fx.model, fx.f_prev, build_layer_mask(depths, 8, strategy),
                                                   fx.cache, fx.step, fx.cond);
    const FeatureGrid r0 = oracle::embed(fx.model, fx.f_prev, 4, 4, 2, fx.cond);
    const FeatureGrid ref = oracle::trajectory(fx.model, r0, depths, strategy, &fx.cache);
    CHECK(max_abs_difference(out.states.back().data(), ref.data()) <= 1e-7);
  }
}

TEST_CASE("masked inference argument checks") {
  const Fixture fx = make_fixture(4, 4);
  CHECK_THROWS_AS(masked_scale_inference(fx.model, fx.f_prev, LayerMask(3, 4, 4, true), fx.cache, fx.step),
                  std::invalid_argument);
  const Fixture shallow = make_fixture(3, 4);
  CHECK_THROWS_AS(masked_scale_inference(fx.model, fx.f_prev, LayerMask(4, 4, 4, true), shallow.cache, fx.step),
                  std::invalid_argument);
  CHECK_THROWS_AS(masked_scale_inference(fx.model, fx.f_prev, LayerMask(4, 4, 4, true), LayerCache{}, fx.step),
                  std::invalid_argument);
}

TEST_CASE("hard pruning equals masked execution at depths 0 and L") {
  std::mt19937_64 rng(5);
  const Fixture fx = make_fixture(6, 5);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 10; ++trial) {
    BinaryMap keep(4, 4);
    DepthMap depths(4, 4);
    for (std::size_t p = 0; p < keep.size(); ++p) {
      keep.set(p, coin(rng));
      depths[p] = keep[p] ? 6 : 0;
    }
    const ScaleOutput pruned = hard_prune_scale_inference(fx.model, fx.f_prev, keep, fx.cache, fx.step, fx.cond);
    const ScaleOutput masked = masked_scale_inference(fx.model, fx.f_prev, build_layer_mask(depths, 6),
                                                      fx.cache, fx.step, fx.cond);
    CHECK(pruned.states == masked.states);
    CHECK(pruned.logits == masked.logits);
  }
  const ScaleOutput all = hard_prune_scale_inference(fx.model, fx.f_prev, BinaryMap(4, 4, true), fx.cache, fx.step, fx.cond);
  CHECK(all.states == full_scale_inference(fx.model, fx.f_prev, fx.step, fx.cond).states);
  const ScaleOutput none = hard_prune_scale_inference(fx.model, fx.f_prev, BinaryMap(4, 4, false), fx.cache, fx.step, fx.cond);
  CHECK(max_abs_difference(none.states.back().data(), proxy_sum(fx, 6).data()) <= 1e-12);
  CHECK_THROWS_AS(hard_prune_scale_inference(fx.model, fx.f_prev, BinaryMap(3, 4), fx.cache, fx.step),
                  std::invalid_argument);
}

TEST_CASE("restoration leaves logits alone without fully masked tokens or reachable threshold") {
  std::mt19937_64 rng(6);
  const FeatureGrid logits = oracle::random_grid(rng, 5, 5, 4);
  const FeatureGrid feats = oracle::random_grid(rng, 5, 5, 3);
  CHECK(restore_fully_masked(logits, BinaryMap(5, 5, false), feats, 0.9, 5) == logits);
  BinaryMap some(5, 5);
  some.set(2, 2, true);
  some.set(0, 4, true);
  CHECK(restore_fully_masked(logits, some, feats, std::nextafter(1.0, 2.0), 5) == logits);
  CHECK_THROWS_AS(restore_fully_masked(logits, some, feats, 0.9, 4), std::invalid_argument);
  CHECK_THROWS_AS(restore_fully_masked(logits, some, FeatureGrid(4, 5, 3), 0.9, 5), std::invalid_argument);
}

TEST_CASE("restoration copies from the first identical neighbour in scan order") {
  std::mt19937_64 rng(7);
  const FeatureGrid logits = oracle::random_grid(rng, 5, 5, 4);
  FeatureGrid feats = oracle::random_grid(rng, 5, 5, 3);
  // Position (2, 2) is masked; (1, 3) and (3, 1) carry its exact feature vector.
  for (int c = 0; c < 3; ++c) {
    feats.at(1, 3, c) = feats.at(2, 2, c);
    feats.at(3, 1, c) = feats.at(2, 2, c);
  }
  BinaryMap masked(5, 5);
  masked.set(2, 2, true);
  const FeatureGrid out = restore_fully_masked(logits, masked, feats, 0.9, 3);
  for (int c = 0; c < 4; ++c) CHECK(out.at(2, 2, c) == logits.at(1, 3, c));
  for (int p = 0; p < 25; ++p)
    if (p != 12) CHECK(std::equal(out.pixel(p).begin(), out.pixel(p).end(), logits.pixel(p).begin()));
}

TEST_CASE("restoration matches an exhaustive window scan") {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.35);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureGrid logits = oracle::random_grid(rng, 6, 7, 3);
    FeatureGrid feats = oracle::random_grid(rng, 6, 7, 2);
    for (double& v : feats.data()) v = std::abs(v);
    BinaryMap masked(6, 7);
    for (std::size_t p = 0; p < masked.size(); ++p) masked.set(p, coin(rng));
    const double tau = 0.5 + 0.02 * trial;
    const int window = 1 + 2 * (trial % 3);
    const FeatureGrid out = restore_fully_masked(logits, masked, feats, tau, window);
    for (int m = 0; m < 6; ++m) {
      for (int n = 0; n < 7; ++n) {
        std::vector<double> expect(logits.pixel(m, n).begin(), logits.pixel(m, n).end());
        if (masked.at(m, n)) {
          double best = -2.0;
          int bm = -1, bn = -1;
          for (int dm = -(window / 2); dm <= window / 2; ++dm)
            for (int dn = -(window / 2); dn <= window / 2; ++dn) {
              const int mm = m + dm, nn = n + dn;
              if (mm < 0 || nn < 0 || mm >= 6 || nn >= 7 || masked.at(mm, nn)) continue;
              const auto a = oracle::to_eigen(feats.pixel(m, n));
              const auto b = oracle::to_eigen(feats.pixel(mm, nn));
              const double s = a.dot(b) / (a.norm() * b.norm());
              if (s > best) {
                best = s;
                bm = mm;
                bn = nn;
              }
            }
          if (bm >= 0 && best > tau) expect.assign(logits.pixel(bm, bn).begin(), logits.pixel(bm, bn).end());
        }
        CHECK(std::equal(expect.begin(), expect.end(), out.pixel(m, n).begin()));
      }
    }
  }
}

TEST_CASE("code blending scales each code by its depth score") {
  std::mt19937_64 rng(9);
  const FeatureGrid codes = oracle::random_grid(rng, 2, 2, 3);
  CHECK(blend_codes(ScalarMap(2, 2, 1.0), codes) == codes);
  CHECK(blend_codes(ScalarMap(2, 2, 0.0), codes) == FeatureGrid(2, 2, 3));
  const FeatureGrid half = blend_codes(ScalarMap(2, 2, std::vector<double>{0.5, 1, 0.25, 0}), codes);
  for (int c = 0; c < 3; ++c) {
    CHECK(half.at(0, 0, c) == 0.5 * codes.at(0, 0, c));
    CHECK(half.at(0, 1, c) == codes.at(0, 1, c));
    CHECK(half.at(1, 0, c) == 0.25 * codes.at(1, 0, c));
    CHECK(half.at(1, 1, c) == 0.0);
  }
  CHECK_THROWS_AS(blend_codes(ScalarMap(2, 3), codes), std::invalid_argument);
}

TEST_CASE("feature accumulation") {
  std::mt19937_64 rng(10);
  const FeatureGrid f = oracle::random_grid(rng, 8, 8, 3);
  CHECK(accumulate_feature(f, FeatureGrid(2, 2, 3), 8, 8) == f);
  const FeatureGrid z8 = oracle::random_grid(rng, 8, 8, 3);
  CHECK(accumulate_feature(f, z8, 8, 8) == f + z8);
  const FeatureGrid z2 = oracle::random_grid(rng, 2, 2, 3);
  const FeatureGrid expect = f + oracle::resize(z2, 8, 8);
  CHECK(max_abs_difference(accumulate_feature(f, z2, 8, 8).data(), expect.data()) <= 1e-12);
  CHECK_THROWS_AS(accumulate_feature(z2, z2, 8, 8), std::invalid_argument);
}

TEST_CASE("top fraction mask keeps the highest scores, earliest first on ties") {
  const ScalarMap s(2, 3, std::vector<double>{0.1, 0.9, 0.5, 0.5, 0.2, 0.5});
  const BinaryMap half = top_fraction_mask(s, 0.5);
  CHECK(half.count() == 3u);
  CHECK(half[1]);
  CHECK(half[2]);
  CHECK(half[3]);
  CHECK_FALSE(half[5]);
  CHECK(top_fraction_mask(s, 0.0).count() == 0u);
  CHECK(top_fraction_mask(s, 1.0).count() == 6u);
  CHECK(top_fraction_mask(s, 0.2).count() == 2u);
}

TEST_CASE("budget targets and dynamic scale selection") {
  const ScaleSchedule sched = ScaleSchedule::default_schedule();
  CHECK(budget_target(sched, 6, 9) == 169.0 / 1024.0);
  CHECK(budget_target(sched, 6, 3) == 1.0);
  PipelineConfig cfg;
  CHECK_FALSE(is_dynamic_scale(cfg, 6));
  CHECK(is_dynamic_scale(cfg, 7));
  cfg.dynamic_start = 8;
  CHECK_FALSE(is_dynamic_scale(cfg, 7));
  cfg.baseline = Baseline::dense;
  CHECK_FALSE(is_dynamic_scale(cfg, 9));
}

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg;
  CHECK_NOTHROW(cfg.validate(32, 10));
  cfg.scheduler.reference_scale = 10;
  CHECK_THROWS_AS(cfg.validate(32, 10), std::invalid_argument);
  cfg.scheduler.reference_scale = 6;
  cfg.dynamic_start = 0;
  CHECK_THROWS_AS(cfg.validate(32, 10), std::invalid_argument);
  cfg.dynamic_start = 1;
  cfg.restore_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(32, 10), std::invalid_argument);
  cfg.restore_threshold = 0.9;
  cfg.restore_window = 4;
  CHECK_THROWS_AS(cfg.validate(32, 10), std::invalid_argument);
}

TEST_CASE("baseline names round-trip") {
  for (Baseline b : {Baseline::depthvar, Baseline::dense, Baseline::hard_prune, Baseline::hard_prune_sobel})
    CHECK(parse_baseline(to_string(b)) == b);
  CHECK_THROWS_AS(parse_baseline("skip"), std::invalid_argument);
}

TEST_SUITE("pipeline") {
  const ScaleSchedule kSmall({{1, 1}, {2, 2}, {4, 4}, {6, 6}, {8, 8}});

  TEST_CASE("saturated full depth reproduces the dense pipeline") {
    const ToyVarModel model = init_model(3, 6, 8, 16);
    PipelineConfig cfg;
    cfg.scheduler.layer_begin = 1;
    cfg.scheduler.layer_end = 4;
    cfg.scheduler.reference_scale = 1;
    cfg.scheduler.fixed_param = 1e6;
    const DenseRun dense = run_dense_pipeline(model, kSmall, 4);
    const RunReport r = run_pipeline(model, kSmall, cfg, 4, dense);
    CHECK(r.final_feature == dense.features.back());
    CHECK(r.speedup == 1.0);
    CHECK(r.scales[3].dynamic);
  }

  TEST_CASE("never-dynamic configuration is the dense pipeline") {
    const ToyVarModel model = init_model(3, 6, 8, 16);
    PipelineConfig cfg;
    cfg.scheduler.layer_begin = 1;
    cfg.scheduler.layer_end = 4;
    cfg.scheduler.reference_scale = 1;
    cfg.dynamic_start = kSmall.count();
    const RunReport r = run_pipeline(model, kSmall, cfg, 2);
    CHECK(r.final_feature == run_dense_pipeline(model, kSmall, 2).features.back());
    for (const ScaleReport& s : r.scales) CHECK_FALSE(s.dynamic);
  }

  TEST_CASE("zero-depth scales leave the feature map unchanged") {
    const ToyVarModel model = init_model(3, 6, 8, 16);
    PipelineConfig cfg;
    cfg.scheduler.layer_begin = 1;
    cfg.scheduler.layer_end = 4;
    cfg.scheduler.reference_scale = 2;
    cfg.scheduler.fixed_param = -1e6;
    const DenseRun dense = run_dense_pipeline(model, kSmall, 6);
    const RunReport r = run_pipeline(model, kSmall, cfg, 6, dense);
    CHECK(r.final_feature == dense.features[2]);
    CHECK(r.scales[3].compute_fraction == 0.0);
    CHECK(r.scales[4].compute_fraction == 0.0);
  }

  TEST_CASE("default configuration: fractions, speedup and segment budget") {
    const ToyVarModel model = init_model(0, 32, 32, 64);
    const ScaleSchedule sched = ScaleSchedule::default_schedule();
    PipelineConfig cfg;
    cfg.scheduler.reference_scale = 5;
    const RunReport r = run_pipeline(model, sched, cfg, 7);
    double dense = 0, masked = 0;
    for (const ScaleReport& s : r.scales) {
      const double cost = static_cast<double>(s.height * s.width) * 32;
      dense += cost;
      if (s.dynamic) {
        REQUIRE(s.depth.has_value());
        const auto d = s.depth->data();
        const double used = std::accumulate(d.begin(), d.end(), 0.0);
        CHECK(s.compute_fraction == s.depth->mean() / 32);
        masked += used;
        if (s.height * s.width >= 1024 && !s.saturated) {
          CHECK(std::abs(s.segment_fraction - s.target) <= 1.0 / 32 + 0.03);
        }
      } else {
        CHECK(s.index <= 5);
        masked += cost;
      }
    }
    CHECK(r.speedup == doctest::Approx(dense / masked).epsilon(1e-12));
    CHECK(r.speedup > 1.0);
    CHECK(r.final_feature.all_finite());
  }

  TEST_CASE("cache after a masked scale telescopes") {
    const Fixture fx = make_fixture(8, 21);
    std::mt19937_64 rng(21);
    const DepthMap depths = random_depths(rng, 4, 4, 8);
    const ScaleOutput out = masked_scale_inference(fx.model, fx.f_prev, build_layer_mask(depths, 8),
                                                   fx.cache, fx.step, fx.cond);
    const LayerCache next = LayerCache::from_states(2, out.states);
    CHECK(max_abs_difference(next.reconstruct().data(), out.states.back().data()) <= 1e-7);
  }

  TEST_CASE("pipeline runs are deterministic") {
    const ToyVarModel model = init_model(3, 6, 8, 16);
    PipelineConfig cfg;
    cfg.scheduler.layer_begin = 1;
    cfg.scheduler.layer_end = 4;
    cfg.scheduler.reference_scale = 1;
    for (Baseline b : {Baseline::depthvar, Baseline::hard_prune, Baseline::hard_prune_sobel}) {
      cfg.baseline = b;
      const RunReport a = run_pipeline(model, kSmall, cfg, 9);
      const RunReport c = run_pipeline(model, kSmall, cfg, 9);
      CHECK(a.final_feature == c.final_feature);
      CHECK(a.speedup == c.speedup);
      CHECK(a.speedup > 1.0);
    }
  }
}
