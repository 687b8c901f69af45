// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>

#include "depthvar/model.hpp"
#include "oracles.hpp"

using namespace depthvar;

namespace {

std::vector<double> rows_of(const FeatureGrid& g) { return {g.data().begin(), g.data().end()}; }

bool is_codebook_row(const ToyVarModel& model, std::span<const double> v) {
  for (int r = 0; r < model.codebook_size; ++r) {
    const auto row = model.codebook.row(r);
    if (std::equal(row.begin(), row.end(), v.begin())) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("model construction is deterministic and seed dependent") {
  const ToyVarModel a = init_model(5, 4, 8, 16);
  const ToyVarModel b = init_model(5, 4, 8, 16);
  const ToyVarModel c = init_model(6, 4, 8, 16);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.blocks.size() == 4u);
  CHECK(a.residual_scale == 0.25);
  CHECK(a.blocks[0].w_up.cols == 16);
  CHECK(a.scale_embedding(3) == b.scale_embedding(3));
  CHECK(a.scale_embedding(3) != a.scale_embedding(4));
  CHECK(condition_map(a, 1) == condition_map(b, 1));
  CHECK_FALSE(condition_map(a, 1) == condition_map(a, 2));
  CHECK(condition_map(a, 1).channels() == 8);

  double sum = 0, sq = 0;
  for (double v : a.blocks[0].wq.data) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(a.blocks[0].wq.data.size());
  CHECK(std::abs(sum / n) < 0.1);
  CHECK(sq / n == doctest::Approx(1.0 / 8.0).epsilon(0.2));
  CHECK_THROWS_AS(init_model(0, 2, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(init_model(0, -1, 4, 4), std::invalid_argument);
}

TEST_CASE("scale schedule validation") {
  const ScaleSchedule s = ScaleSchedule::default_schedule();
  CHECK(s.count() == 10);
  CHECK(s.final_height() == 32);
  CHECK(s.step(4).positions() == 36);
  CHECK_THROWS_AS(s.step(10), std::out_of_range);
  CHECK_THROWS_AS(ScaleSchedule({{1, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(ScaleSchedule({{2, 2}, {4, 4}}), std::invalid_argument);
  CHECK_THROWS_AS(ScaleSchedule({{1, 1}, {4, 4}, {3, 3}}), std::invalid_argument);
}

TEST_CASE("embedding of a zero feature map is the scale embedding") {
  const ToyVarModel model = init_model(1, 2, 8, 8);
  const FeatureGrid r0 = embed_input(model, FeatureGrid(4, 4, 8), {3, 2, 3});
  const std::vector<double> e = model.scale_embedding(3);
  for (int p = 0; p < r0.positions(); ++p) {
    CHECK(std::equal(e.begin(), e.end(), r0.pixel(p).begin()));
  }
}

TEST_CASE("embedding at the feature resolution skips resampling") {
  const ToyVarModel model = init_model(1, 2, 4, 8);
  std::mt19937_64 rng(1);
  const FeatureGrid f = oracle::random_grid(rng, 3, 3, 4);
  const FeatureGrid r0 = embed_input(model, f, {2, 3, 3});
  const std::vector<double> e = model.scale_embedding(2);
  for (int p = 0; p < 9; ++p) {
    std::vector<double> expect(4);
    multiply_row(f.pixel(p), model.embed, expect);
    for (int c = 0; c < 4; ++c) CHECK(r0.pixel(p)[c] == expect[static_cast<std::size_t>(c)] + e[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("embedding matches resize-then-project with a condition map") {
  const ToyVarModel model = init_model(2, 2, 6, 8);
  std::mt19937_64 rng(3);
  const FeatureGrid f = oracle::random_grid(rng, 2, 2, 6);
  const FeatureGrid cond = condition_map(model, 9);
  const FeatureGrid got = embed_input(model, f, {4, 4, 4}, cond);
  const FeatureGrid ref = oracle::embed(model, f, 4, 4, 4, cond);
  CHECK(max_abs_difference(got.data(), ref.data()) <= 1e-12);
  CHECK_THROWS_AS(embed_input(model, FeatureGrid(2, 2, 5), {1, 2, 2}), std::invalid_argument);
}

TEST_CASE("a single token block matches the analytic evaluation") {
  const ToyVarModel model = init_model(4, 3, 8, 8);
  std::mt19937_64 rng(5);
  const FeatureGrid x = oracle::random_grid(rng, 1, 1, 8);
  const Position pos{3, 5};
  const std::vector<double> got = layer_forward(model, 1, x.data(), std::span<const Position>(&pos, 1));
  const oracle::Token t{3, 5, oracle::to_eigen(x.data())};
  const Eigen::VectorXd ref = oracle::block_token(model, 1, t, {t});
  for (int c = 0; c < 8; ++c) CHECK(std::abs(got[static_cast<std::size_t>(c)] - ref(c)) <= 1e-12);
}

TEST_CASE("layer forward matches the per-token evaluator on a full grid") {
  const ToyVarModel model = init_model(4, 2, 8, 8);
  std::mt19937_64 rng(6);
  const FeatureGrid x = oracle::random_grid(rng, 3, 4, 8);
  const std::vector<Position> pos = grid_positions(3, 4);
  const std::vector<double> got = layer_forward(model, 0, x.data(), pos);
  std::vector<oracle::Token> tokens;
  for (const Position& p : pos) tokens.push_back({p.m, p.n, oracle::to_eigen(x.pixel(p.m, p.n))});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Eigen::VectorXd ref = oracle::block_token(model, 0, tokens[i], tokens);
    for (int c = 0; c < 8; ++c) CHECK(std::abs(got[i * 8 + static_cast<std::size_t>(c)] - ref(c)) <= 1e-12);
  }
}

TEST_CASE("layer forward is equivariant to storage order") {
  const ToyVarModel model = init_model(8, 2, 8, 8);
  std::mt19937_64 rng(8);
  const FeatureGrid x = oracle::random_grid(rng, 4, 4, 8);
  const std::vector<Position> pos = grid_positions(4, 4);
  const std::vector<double> base = layer_forward(model, 1, x.data(), pos);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> rows;
    std::vector<Position> ppos;
    for (std::size_t i : perm) {
      const auto px = x.pixel(static_cast<int>(i));
      rows.insert(rows.end(), px.begin(), px.end());
      ppos.push_back(pos[i]);
    }
    const std::vector<double> out = layer_forward(model, 1, rows, ppos);
    for (std::size_t j = 0; j < perm.size(); ++j)
      for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out[j * 8 + c] - base[perm[j] * 8 + c]) <= 1e-12);
  }
}

TEST_CASE("layer forward argument checks") {
  const ToyVarModel model = init_model(0, 2, 4, 4);
  const std::vector<double> rows(8);
  const std::vector<Position> one = {{0, 0}};
  CHECK_THROWS_AS(layer_forward(model, 0, rows, one), std::invalid_argument);
  CHECK_THROWS_AS(layer_forward(model, 2, std::vector<double>(4), one), std::out_of_range);
}

TEST_CASE("grid layer forward touches only active tokens") {
  const ToyVarModel model = init_model(3, 2, 8, 8);
  std::mt19937_64 rng(10);
  const FeatureGrid x = oracle::random_grid(rng, 3, 3, 8);
  BinaryMap active(3, 3);
  active.set(0, 1, true);
  active.set(2, 2, true);
  const FeatureGrid out = layer_forward(model, 0, x, active);
  const std::vector<Position> pos = {{0, 1}, {2, 2}};
  std::vector<double> rows;
  for (const Position& p : pos) rows.insert(rows.end(), x.pixel(p.m, p.n).begin(), x.pixel(p.m, p.n).end());
  const std::vector<double> y = layer_forward(model, 0, rows, pos);
  for (int p = 0; p < 9; ++p) {
    const auto o = out.pixel(p);
    if (p == 1) CHECK(std::equal(o.begin(), o.end(), y.begin()));
    else if (p == 8) CHECK(std::equal(o.begin(), o.end(), y.begin() + 8));
    else CHECK(std::equal(o.begin(), o.end(), x.pixel(p).begin()));
  }
}

TEST_CASE("head lookup with an identity head selects the hot channel") {
  ToyVarModel model = init_model(1, 1, 4, 6);
  model.head = Matrix(4, 6);
  for (int i = 0; i < 4; ++i) model.head.at(i, i) = 1.0;
  FeatureGrid r(1, 2, 4);
  r.at(0, 0, 2) = 1.0;
  r.at(0, 1, 1) = 0.5;
  r.at(0, 1, 3) = 0.5;
  const HeadOutput out = head_and_lookup(model, r);
  const auto row2 = model.codebook.row(2);
  const auto row1 = model.codebook.row(1);
  CHECK(std::equal(row2.begin(), row2.end(), out.codes.pixel(0).begin()));
  CHECK(std::equal(row1.begin(), row1.end(), out.codes.pixel(1).begin()));
}

TEST_CASE("code lookup matches a linear argmax scan") {
  const ToyVarModel model = init_model(2, 1, 4, 16);
  std::mt19937_64 rng(12);
  const FeatureGrid logits = oracle::random_grid(rng, 4, 4, 16);
  const FeatureGrid codes = lookup_codes(model, logits);
  for (int p = 0; p < 16; ++p) {
    const auto row = model.codebook.row(oracle::argmax(logits.pixel(p)));
    CHECK(std::equal(row.begin(), row.end(), codes.pixel(p).begin()));
  }
  CHECK_THROWS_AS(lookup_codes(model, FeatureGrid(1, 1, 15)), std::invalid_argument);
}

TEST_CASE("full inference without blocks returns the embedding") {
  const ToyVarModel model = init_model(3, 0, 4, 4);
  std::mt19937_64 rng(2);
  const FeatureGrid f = oracle::random_grid(rng, 4, 4, 4);
  const ScaleOutput out = full_scale_inference(model, f, {1, 2, 2});
  REQUIRE(out.states.size() == 1u);
  CHECK(out.states[0] == embed_input(model, f, {1, 2, 2}));
}

TEST_CASE("full inference is the fold of the dense block and matches the token evaluator") {
  const ToyVarModel model = init_model(7, 4, 8, 16);
  std::mt19937_64 rng(7);
  const FeatureGrid f = oracle::random_grid(rng, 4, 4, 8, 0.5);
  const FeatureGrid cond = condition_map(model, 3);
  const ScaleStep step{2, 3, 3};
  const ScaleOutput out = full_scale_inference(model, f, step, cond);
  REQUIRE(out.states.size() == 5u);
  FeatureGrid x = embed_input(model, f, step, cond);
  const BinaryMap all(3, 3, true);
  for (int b = 0; b < 4; ++b) {
    x = layer_forward(model, b, x, all);
    CHECK(x == out.states[static_cast<std::size_t>(b) + 1]);
  }
  const FeatureGrid r0 = oracle::embed(model, f, 3, 3, 2, cond);
  const FeatureGrid ref = oracle::trajectory(model, r0, DepthMap(3, 3, 4), MaskStrategy::bit_reversal, nullptr);
  CHECK(max_abs_difference(out.states.back().data(), ref.data()) <= 1e-10);
  for (int p = 0; p < 9; ++p) CHECK(is_codebook_row(model, out.codes.pixel(p)));
}

TEST_CASE("start-token state reproduces the recorded golden vector") {
  const ToyVarModel model = init_model(0, 8, 16, 32);
  const ScaleOutput out =
      full_scale_inference(model, FeatureGrid(1, 1, 16), {0, 1, 1}, condition_map(model, 0));
  const FeatureGrid golden =
      read_state_fixture(std::filesystem::path(DEPTHVAR_GOLDEN_DIR) / "start_token_L8_C16.dvfx");
  REQUIRE(golden.same_shape(out.states.back()));
  for (std::size_t i = 0; i < golden.size(); ++i) {
    CHECK(static_cast<float>(out.states.back().data()[i]) == static_cast<float>(golden.data()[i]));
  }
}

TEST_CASE("state fixtures round-trip through float32") {
  const auto path = std::filesystem::temp_directory_path() / "depthvar_fixture.dvfx";
  std::mt19937_64 rng(1);
  const FeatureGrid g = oracle::random_grid(rng, 2, 3, 5);
  write_state_fixture(path, g);
  const FeatureGrid back = read_state_fixture(path);
  REQUIRE(back.same_shape(g));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(back.data()[i] == static_cast<double>(static_cast<float>(g.data()[i])));
  CHECK(std::filesystem::file_size(path) == 16u + 4u * 30u);
  std::filesystem::remove(path);
  CHECK_THROWS(read_state_fixture(path));
}

TEST_CASE("layer similarity") {
  std::mt19937_64 rng(13);
  const FeatureGrid a = oracle::random_grid(rng, 2, 3, 6);
  const FeatureGrid b = oracle::random_grid(rng, 2, 3, 6);
  const FeatureGrid same = layer_similarity({a, a});
  for (double v : same.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  const FeatureGrid neg = layer_similarity({a, a * -1.0});
  for (double v : neg.data()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-15));
  const FeatureGrid zero = layer_similarity({a, FeatureGrid(2, 3, 6)});
  for (double v : zero.data()) CHECK(v == 0.0);

  const FeatureGrid sim = layer_similarity({a, b, a});
  CHECK(sim.channels() == 2);
  for (int p = 0; p < 6; ++p) {
    const auto va = oracle::to_eigen(a.pixel(p));
    const auto vb = oracle::to_eigen(b.pixel(p));
    const double cos = va.dot(vb) / (va.norm() * vb.norm());
    CHECK(std::abs(sim.pixel(p)[0] - cos) <= 1e-9);
    CHECK(std::abs(sim.pixel(p)[1] - cos) <= 1e-9);
  }
  CHECK_THROWS_AS(layer_similarity({a}), std::invalid_argument);
}

TEST_CASE("early exit") {
  const ToyVarModel model = init_model(9, 32, 8, 16);
  std::mt19937_64 rng(14);
  const FeatureGrid f = oracle::random_grid(rng, 3, 3, 8, 0.5);
  const ScaleStep step{1, 2, 2};
  const ScaleOutput full = full_scale_inference(model, f, step);
  const HeadOutput at_l = early_exit_inference(model, f, step, 32);
  CHECK(at_l.logits == full.logits);
  CHECK(at_l.codes == full.codes);
  const HeadOutput at_0 = early_exit_inference(model, f, step, 0);
  CHECK(at_0.logits == head_and_lookup(model, full.states.front()).logits);
  const HeadOutput at_26 = early_exit_inference(model, f, step, 26);
  CHECK(at_26.logits == head_and_lookup(model, full.states[26]).logits);
  CHECK_THROWS_AS(early_exit_inference(model, f, step, 33), std::out_of_range);
  CHECK_THROWS_AS(early_exit_inference(model, f, step, -1), std::out_of_range);
}

TEST_CASE("repeated inference is bit-identical") {
  const ToyVarModel model = init_model(11, 3, 8, 8);
  std::mt19937_64 rng(15);
  const FeatureGrid f = oracle::random_grid(rng, 4, 4, 8);
  const ScaleOutput a = full_scale_inference(model, f, {2, 4, 4}, condition_map(model, 1));
  const ScaleOutput b = full_scale_inference(model, f, {2, 4, 4}, condition_map(model, 1));
  CHECK(a.states == b.states);
  CHECK(a.logits == b.logits);
  CHECK(rows_of(a.codes) == rows_of(b.codes));
}
