// SPDX-License-Identifier: Apache-2.0

#include "depthvar/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace depthvar {

namespace {

constexpr std::uint64_t kStreamBlocks = 0x424c4f434bULL;
constexpr std::uint64_t kStreamEmbed = 0x454d424544ULL;
constexpr std::uint64_t kStreamHead = 0x48454144ULL;
constexpr std::uint64_t kStreamCodebook = 0x434f444542ULL;
constexpr std::uint64_t kStreamScale = 0x5343414c45ULL;
constexpr std::uint64_t kStreamCondition = 0x434f4e44ULL;
constexpr double kCodebookScale = 0.5;
constexpr double kNormEps = 1e-6;
constexpr std::array<char, 4> kFixtureMagic = {'D', 'V', 'F', 'X'};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Zero-mean unit-variance uniform draws. The conversion is done by hand so the
// stream is identical across standard library implementations.
class UnitUniform {
 public:
  UnitUniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
      : engine_(splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)))) {}

  double operator()() {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * std::sqrt(3.0);
  }

 private:
  std::mt19937_64 engine_;
};

Matrix random_matrix(int rows, int cols, double stddev, UnitUniform& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = stddev * rng();
  return m;
}

std::vector<double> random_gain(int n, UnitUniform& rng) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (double& v : g) v = 1.0 + 0.1 * rng();
  return g;
}

void rms_norm(std::span<const double> x, std::span<const double> gain, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

// Channel pairs (2j, 2j+1): the first half of the pairs rotate with the row
// coordinate, the second half with the column coordinate.
void apply_rope2d(std::span<double> v, Position pos, double base) {
  const int pairs = static_cast<int>(v.size()) / 2;
  const int row_pairs = (pairs + 1) / 2;
  const int col_pairs = pairs - row_pairs;
  for (int j = 0; j < pairs; ++j) {
    const bool is_row = j < row_pairs;
    const int t = is_row ? j : j - row_pairs;
    const int group = is_row ? row_pairs : col_pairs;
    const double theta = std::pow(base, -static_cast<double>(t) / group);
    const double angle = (is_row ? pos.m : pos.n) * theta;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = v[2 * j];
    const double x1 = v[2 * j + 1];
    v[2 * j] = x0 * c - x1 * s;
    v[2 * j + 1] = x0 * s + x1 * c;
  }
}

void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw std::runtime_error("truncated state fixture");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void multiply_row(std::span<const double> x, const Matrix& w, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const double xr = x[static_cast<std::size_t>(r)];
    const auto wr = w.row(r);
    for (int c = 0; c < w.cols; ++c) out[static_cast<std::size_t>(c)] += xr * wr[static_cast<std::size_t>(c)];
  }
}

// ---------------------------------------------------------------------------
// Construction

std::vector<double> ToyVarModel::scale_embedding(int index) const {
  UnitUniform rng(seed, kStreamScale, static_cast<std::uint64_t>(index));
  std::vector<double> e(static_cast<std::size_t>(channels));
  for (double& v : e) v = rng();
  return e;
}

ToyVarModel init_model(std::uint64_t seed, int num_layers, int channels, int codebook_size) {
  if (num_layers < 0) throw std::invalid_argument("init_model: negative layer count");
  if (channels < 1 || codebook_size < 1) {
    throw std::invalid_argument("init_model: channels and codebook size must be positive");
  }
  ToyVarModel model;
  model.seed = seed;
  model.num_layers = num_layers;
  model.channels = channels;
  model.codebook_size = codebook_size;
  model.residual_scale = num_layers > 0 ? 1.0 / num_layers : 1.0;

  const int hidden = 2 * channels;
  const double s_c = 1.0 / std::sqrt(static_cast<double>(channels));
  const double s_h = 1.0 / std::sqrt(static_cast<double>(hidden));
  model.blocks.reserve(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    UnitUniform rng(seed, kStreamBlocks, static_cast<std::uint64_t>(l));
    BlockParams b;
    b.attn_norm_gain = random_gain(channels, rng);
    b.ffn_norm_gain = random_gain(channels, rng);
    b.wq = random_matrix(channels, channels, s_c, rng);
    b.wk = random_matrix(channels, channels, s_c, rng);
    b.wv = random_matrix(channels, channels, s_c, rng);
    b.wo = random_matrix(channels, channels, s_c, rng);
    b.w_up = random_matrix(channels, hidden, s_c, rng);
    b.w_down = random_matrix(hidden, channels, s_h, rng);
    model.blocks.push_back(std::move(b));
  }
  UnitUniform embed_rng(seed, kStreamEmbed);
  model.embed = random_matrix(channels, channels, s_c, embed_rng);
  UnitUniform head_rng(seed, kStreamHead);
  model.head = random_matrix(channels, codebook_size, s_c, head_rng);
  UnitUniform code_rng(seed, kStreamCodebook);
  model.codebook = random_matrix(codebook_size, channels, kCodebookScale, code_rng);
  return model;
}

FeatureGrid condition_map(const ToyVarModel& model, std::uint64_t prompt_seed) {
  UnitUniform rng(model.seed, kStreamCondition, prompt_seed);
  FeatureGrid c(kConditionSize, kConditionSize, model.channels);
  for (double& v : c.data()) v = rng();
  return c;
}

// ---------------------------------------------------------------------------
// Scale schedule

ScaleSchedule::ScaleSchedule(std::vector<std::pair<int, int>> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("scale schedule needs at least two scales");
  if (sizes_.front() != std::pair<int, int>{1, 1}) {
    throw std::invalid_argument("scale schedule must start with the 1x1 start token");
  }
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    const auto [h, w] = sizes_[i];
    if (h < 1 || w < 1) throw std::invalid_argument("scale sizes must be positive");
    if (i > 0 && (h < sizes_[i - 1].first || w < sizes_[i - 1].second)) {
      throw std::invalid_argument("scale sizes must be non-decreasing");
    }
    steps_.push_back({static_cast<int>(i), h, w});
  }
}

ScaleSchedule ScaleSchedule::default_schedule() {
  return ScaleSchedule({{1, 1}, {2, 2}, {3, 3}, {4, 4}, {6, 6}, {9, 9}, {13, 13}, {18, 18},
                        {24, 24}, {32, 32}});
}

ScaleStep ScaleSchedule::step(int index) const {
  if (index < 0 || index >= count()) {
    throw std::out_of_range("scale index " + std::to_string(index) + " outside schedule of " +
                            std::to_string(count()));
  }
  return steps_[static_cast<std::size_t>(index)];
}

// ---------------------------------------------------------------------------
// Forward passes

std::vector<Position> grid_positions(int height, int width) {
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(height) * width);
  for (int m = 0; m < height; ++m) {
    for (int n = 0; n < width; ++n) out.push_back({m, n});
  }
  return out;
}

FeatureGrid embed_input(const ToyVarModel& model, const FeatureGrid& f_prev, const ScaleStep& step,
                        const FeatureGrid& condition) {
  if (f_prev.channels() != model.channels) {
    throw std::invalid_argument("embed_input: feature map has " +
                                std::to_string(f_prev.channels()) + " channels, model expects " +
                                std::to_string(model.channels));
  }
  if (!condition.empty() && condition.channels() != model.channels) {
    throw std::invalid_argument("embed_input: condition map has the wrong channel count");
  }
  const FeatureGrid down = bilinear_resize(f_prev, step.height, step.width);
  const FeatureGrid cond = condition.empty() ? FeatureGrid{}
                                             : bilinear_resize(condition, step.height, step.width);
  const std::vector<double> scale_emb = model.scale_embedding(step.index);
  FeatureGrid out(step.height, step.width, model.channels);
  for (int p = 0; p < out.positions(); ++p) {
    auto dst = out.pixel(p);
    multiply_row(down.pixel(p), model.embed, dst);
    for (int c = 0; c < model.channels; ++c) {
      dst[c] += scale_emb[c];
      if (!cond.empty()) dst[c] += cond.pixel(p)[c];
    }
  }
  return out;
}

std::vector<double> layer_forward(const ToyVarModel& model, int block, std::span<const double> rows,
                                  std::span<const Position> positions) {
  if (block < 0 || block >= model.num_layers) {
    throw std::out_of_range("layer_forward: block " + std::to_string(block) + " out of range");
  }
  const int c = model.channels;
  const std::size_t n = positions.size();
  if (rows.size() != n * static_cast<std::size_t>(c)) {
    throw std::invalid_argument("layer_forward: " + std::to_string(rows.size()) +
                                " values do not match " + std::to_string(n) + " positions");
  }
  const BlockParams& p = model.blocks[static_cast<std::size_t>(block)];
  const std::size_t cc = static_cast<std::size_t>(c);

  std::vector<double> q(n * cc), k(n * cc), v(n * cc);
  std::vector<double> normed(cc);
  for (std::size_t i = 0; i < n; ++i) {
    rms_norm(rows.subspan(i * cc, cc), p.attn_norm_gain, normed);
    std::span<double> qi(q.data() + i * cc, cc);
    std::span<double> ki(k.data() + i * cc, cc);
    multiply_row(normed, p.wq, qi);
    multiply_row(normed, p.wk, ki);
    multiply_row(normed, p.wv, std::span<double>(v.data() + i * cc, cc));
    apply_rope2d(qi, positions[i], model.rope_base);
    apply_rope2d(ki, positions[i], model.rope_base);
  }

  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  const int hidden = p.w_up.cols;
  std::vector<double> out(rows.begin(), rows.end());
  std::vector<double> scores(n), mixed(cc), attn(cc), h(cc), up(static_cast<std::size_t>(hidden)),
      ffn(cc);
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = q.data() + i * cc;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double* kj = k.data() + j * cc;
      double s = 0.0;
      for (std::size_t t = 0; t < cc; ++t) s += qi[t] * kj[t];
      scores[j] = s * inv_sqrt_c;
      max_score = std::max(max_score, scores[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      scores[j] = std::exp(scores[j] - max_score);
      denom += scores[j];
    }
    std::fill(mixed.begin(), mixed.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double a = scores[j] / denom;
      const double* vj = v.data() + j * cc;
      for (std::size_t t = 0; t < cc; ++t) mixed[t] += a * vj[t];
    }
    multiply_row(mixed, p.wo, attn);

    const auto xi = rows.subspan(i * cc, cc);
    for (std::size_t t = 0; t < cc; ++t) h[t] = xi[t] + model.residual_scale * attn[t];
    rms_norm(h, p.ffn_norm_gain, normed);
    multiply_row(normed, p.w_up, up);
    for (double& u : up) u = gelu(u);
    multiply_row(up, p.w_down, ffn);
    for (std::size_t t = 0; t < cc; ++t) out[i * cc + t] = h[t] + model.residual_scale * ffn[t];
  }
  return out;
}

FeatureGrid layer_forward(const ToyVarModel& model, int block, const FeatureGrid& x,
                          const BinaryMap& active) {
  if (active.height() != x.height() || active.width() != x.width()) {
    throw std::invalid_argument("layer_forward: mask shape does not match grid");
  }
  const std::size_t cc = static_cast<std::size_t>(x.channels());
  std::vector<Position> positions;
  std::vector<int> flat;
  std::vector<double> rows;
  for (int m = 0; m < x.height(); ++m) {
    for (int n = 0; n < x.width(); ++n) {
      if (!active.at(m, n)) continue;
      positions.push_back({m, n});
      flat.push_back(m * x.width() + n);
      const auto px = x.pixel(m, n);
      rows.insert(rows.end(), px.begin(), px.end());
    }
  }
  FeatureGrid out = x;
  if (positions.empty()) return out;
  const std::vector<double> y = layer_forward(model, block, rows, positions);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(i * cc), cc, out.pixel(flat[i]).begin());
  }
  return out;
}

FeatureGrid lookup_codes(const ToyVarModel& model, const FeatureGrid& logits) {
  if (logits.channels() != model.codebook_size) {
    throw std::invalid_argument("lookup_codes: logits width does not match the codebook");
  }
  FeatureGrid codes(logits.height(), logits.width(), model.channels);
  for (int p = 0; p < logits.positions(); ++p) {
    const auto l = logits.pixel(p);
    // First maximum wins, so ties resolve to the lowest code index.
    const int code = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
    const auto row = model.codebook.row(code);
    std::copy(row.begin(), row.end(), codes.pixel(p).begin());
  }
  return codes;
}

HeadOutput head_and_lookup(const ToyVarModel& model, const FeatureGrid& hidden) {
  if (hidden.channels() != model.channels) {
    throw std::invalid_argument("head_and_lookup: hidden state width mismatch");
  }
  FeatureGrid logits(hidden.height(), hidden.width(), model.codebook_size);
  for (int p = 0; p < hidden.positions(); ++p) {
    multiply_row(hidden.pixel(p), model.head, logits.pixel(p));
  }
  FeatureGrid codes = lookup_codes(model, logits);
  return {std::move(logits), std::move(codes)};
}

namespace {

FeatureGrid dense_block(const ToyVarModel& model, int block, const FeatureGrid& x,
                        std::span<const Position> positions) {
  std::vector<double> y = layer_forward(model, block, x.data(), positions);
  return FeatureGrid(x.height(), x.width(), x.channels(), std::move(y));
}

}  // namespace

ScaleOutput full_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                 const ScaleStep& step, const FeatureGrid& condition) {
  ScaleOutput out;
  out.states.reserve(static_cast<std::size_t>(model.num_layers) + 1);
  out.states.push_back(embed_input(model, f_prev, step, condition));
  const std::vector<Position> positions = grid_positions(step.height, step.width);
  for (int b = 0; b < model.num_layers; ++b) {
    out.states.push_back(dense_block(model, b, out.states.back(), positions));
  }
  HeadOutput head = head_and_lookup(model, out.states.back());
  out.logits = std::move(head.logits);
  out.codes = std::move(head.codes);
  return out;
}

FeatureGrid layer_similarity(const LayerStates& states) {
  if (states.size() < 2) throw std::invalid_argument("layer_similarity needs at least two states");
  const FeatureGrid& first = states.front();
  const int layers = static_cast<int>(states.size()) - 1;
  FeatureGrid out(first.height(), first.width(), layers);
  for (int l = 0; l < layers; ++l) {
    const FeatureGrid& prev = states[static_cast<std::size_t>(l)];
    const FeatureGrid& next = states[static_cast<std::size_t>(l) + 1];
    if (!prev.same_shape(next)) throw std::invalid_argument("layer_similarity: shape mismatch");
    for (int p = 0; p < first.positions(); ++p) {
      const auto a = next.pixel(p);
      const auto b = prev.pixel(p);
      double dot = 0, na = 0, nb = 0;
      for (std::size_t t = 0; t < a.size(); ++t) {
        dot += a[t] * b[t];
        na += a[t] * a[t];
        nb += b[t] * b[t];
      }
      const double denom = std::sqrt(na) * std::sqrt(nb);
      out.pixel(p)[l] = denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
    }
  }
  return out;
}

HeadOutput early_exit_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                const ScaleStep& step, int exit_layer,
                                const FeatureGrid& condition) {
  if (exit_layer < 0 || exit_layer > model.num_layers) {
    throw std::out_of_range("early exit layer " + std::to_string(exit_layer) + " outside [0, " +
                            std::to_string(model.num_layers) + "]");
  }
  FeatureGrid x = embed_input(model, f_prev, step, condition);
  const std::vector<Position> positions = grid_positions(step.height, step.width);
  for (int b = 0; b < exit_layer; ++b) x = dense_block(model, b, x, positions);
  return head_and_lookup(model, x);
}

// ---------------------------------------------------------------------------
// Fixtures

void write_state_fixture(const std::filesystem::path& path, const FeatureGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kFixtureMagic.data(), 4);
  write_u32(os, static_cast<std::uint32_t>(g.height()));
  write_u32(os, static_cast<std::uint32_t>(g.width()));
  write_u32(os, static_cast<std::uint32_t>(g.channels()));
  for (double v : g.data()) write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

FeatureGrid read_state_fixture(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open state fixture " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kFixtureMagic) throw std::runtime_error(path.string() + " is not a state fixture");
  const auto h = static_cast<int>(read_u32(is));
  const auto w = static_cast<int>(read_u32(is));
  const auto c = static_cast<int>(read_u32(is));
  std::vector<double> data(static_cast<std::size_t>(h) * w * c);
  for (double& v : data) v = static_cast<double>(std::bit_cast<float>(read_u32(is)));
  return FeatureGrid(h, w, c, std::move(data));
}

}  // namespace depthvar
