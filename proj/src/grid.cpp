// SPDX-License-Identifier: Apache-2.0

#include "depthvar/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace depthvar {

namespace {

void check_dims(int h, int w, int c) {
  if (h < 1 || w < 1 || c < 1) {
    throw std::invalid_argument("grid dimensions must be positive, got " + std::to_string(h) +
                                "x" + std::to_string(w) + "x" + std::to_string(c));
  }
}

struct AxisSample {
  int lo;
  int hi;
  double frac;
};

// Half-pixel source coordinate for one output index.
AxisSample axis_sample(int out_index, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (out_index + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  int lo = static_cast<int>(std::floor(src));
  if (lo > in_size - 1) lo = in_size - 1;
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

double ssim_with_range(std::span<const double> a, std::span<const double> b, int h, int w,
                       double range) {
  if (range <= 0.0) {
    // Both maps hold the same single value.
    return 1.0;
  }
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const int wh = std::min(8, h);
  const int ww = std::min(8, w);
  const double count = static_cast<double>(wh) * ww;
  double total = 0.0;
  int windows = 0;
  for (int m0 = 0; m0 + wh <= h; ++m0) {
    for (int n0 = 0; n0 + ww <= w; ++n0) {
      double sa = 0, sb = 0;
      for (int m = m0; m < m0 + wh; ++m) {
        for (int n = n0; n < n0 + ww; ++n) {
          sa += a[static_cast<std::size_t>(m) * w + n];
          sb += b[static_cast<std::size_t>(m) * w + n];
        }
      }
      const double mu_a = sa / count;
      const double mu_b = sb / count;
      double vaa = 0, vbb = 0, vab = 0;
      for (int m = m0; m < m0 + wh; ++m) {
        for (int n = n0; n < n0 + ww; ++n) {
          const double da = a[static_cast<std::size_t>(m) * w + n] - mu_a;
          const double db = b[static_cast<std::size_t>(m) * w + n] - mu_b;
          vaa += da * da;
          vbb += db * db;
          vab += da * db;
        }
      }
      vaa /= count;
      vbb /= count;
      vab /= count;
      const double num = (2 * mu_a * mu_b + c1) * (2 * vab + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (vaa + vbb + c2);
      total += num / den;
      ++windows;
    }
  }
  return std::clamp(total / windows, -1.0, 1.0);
}

double joint_range(std::span<const double> a, std::span<const double> b) {
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  return std::max(*amax, *bmax) - std::min(*amin, *bmin);
}

std::vector<std::uint8_t> normalise_bytes(std::span<const double> v) {
  std::vector<std::uint8_t> out(v.size(), 0);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  if (span <= 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround((v[i] - *lo) / span * 255.0));
  }
  return out;
}

void write_pgm_bytes(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureGrid

FeatureGrid::FeatureGrid(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

FeatureGrid::FeatureGrid(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width, channels);
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("FeatureGrid data length does not match shape");
  }
}

bool FeatureGrid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

FeatureGrid& FeatureGrid::operator+=(const FeatureGrid& other) {
  if (!same_shape(other)) throw std::invalid_argument("FeatureGrid shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

FeatureGrid& FeatureGrid::operator-=(const FeatureGrid& other) {
  if (!same_shape(other)) throw std::invalid_argument("FeatureGrid shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

FeatureGrid& FeatureGrid::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

FeatureGrid operator+(FeatureGrid a, const FeatureGrid& b) { return a += b; }
FeatureGrid operator-(FeatureGrid a, const FeatureGrid& b) { return a -= b; }
FeatureGrid operator*(FeatureGrid a, double s) { return a *= s; }

// ---------------------------------------------------------------------------
// ScalarMap / BinaryMap

ScalarMap::ScalarMap(int height, int width, double fill) : height_(height), width_(width) {
  check_dims(height, width, 1);
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

ScalarMap::ScalarMap(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width, 1);
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("ScalarMap data length does not match shape");
  }
}

bool ScalarMap::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

BinaryMap::BinaryMap(int height, int width, bool fill) : height_(height), width_(width) {
  check_dims(height, width, 1);
  data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMap::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

ScalarMap to_scalar_map(const FeatureGrid& g, int channel) {
  if (channel < 0 || channel >= g.channels()) throw std::out_of_range("channel out of range");
  ScalarMap out(g.height(), g.width());
  for (int p = 0; p < g.positions(); ++p) out[p] = g.pixel(p)[channel];
  return out;
}

FeatureGrid to_feature_grid(const ScalarMap& s) {
  return FeatureGrid(s.height(), s.width(), 1, std::vector<double>(s.data().begin(), s.data().end()));
}

ScalarMap channel_mean(const FeatureGrid& g) {
  ScalarMap out(g.height(), g.width());
  for (int p = 0; p < g.positions(); ++p) {
    double acc = 0.0;
    for (double v : g.pixel(p)) acc += v;
    out[p] = acc / g.channels();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

FeatureGrid bilinear_resize(const FeatureGrid& g, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw std::invalid_argument("bilinear_resize: target size must be at least 1x1");
  }
  if (g.empty()) throw std::invalid_argument("bilinear_resize: empty input grid");
  if (out_height == g.height() && out_width == g.width()) return g;

  const int c = g.channels();
  FeatureGrid out(out_height, out_width, c);
  std::vector<AxisSample> xs(out_width);
  for (int n = 0; n < out_width; ++n) xs[n] = axis_sample(n, g.width(), out_width);

  for (int m = 0; m < out_height; ++m) {
    const AxisSample ys = axis_sample(m, g.height(), out_height);
    for (int n = 0; n < out_width; ++n) {
      const AxisSample& x = xs[n];
      const auto p00 = g.pixel(ys.lo, x.lo);
      const auto p01 = g.pixel(ys.lo, x.hi);
      const auto p10 = g.pixel(ys.hi, x.lo);
      const auto p11 = g.pixel(ys.hi, x.hi);
      const double w00 = (1 - ys.frac) * (1 - x.frac);
      const double w01 = (1 - ys.frac) * x.frac;
      const double w10 = ys.frac * (1 - x.frac);
      const double w11 = ys.frac * x.frac;
      auto dst = out.pixel(m, n);
      for (int ch = 0; ch < c; ++ch) {
        dst[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
    }
  }
  return out;
}

ScalarMap bilinear_resize(const ScalarMap& s, int out_height, int out_width) {
  const FeatureGrid r = bilinear_resize(to_feature_grid(s), out_height, out_width);
  return ScalarMap(out_height, out_width, std::vector<double>(r.data().begin(), r.data().end()));
}

// ---------------------------------------------------------------------------
// Analysis

ScalarMap sobel_magnitude(const ScalarMap& m) {
  const int h = m.height();
  const int w = m.width();
  if (h < 3 || w < 3) throw std::invalid_argument("sobel_magnitude: map must be at least 3x3");
  static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  ScalarMap out(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double gx = 0.0, gy = 0.0;
      for (int di = -1; di <= 1; ++di) {
        const int ii = std::clamp(i + di, 0, h - 1);
        for (int dj = -1; dj <= 1; ++dj) {
          const int jj = std::clamp(j + dj, 0, w - 1);
          const double v = m.at(ii, jj);
          gx += kx[di + 1][dj + 1] * v;
          gy += ky[di + 1][dj + 1] * v;
        }
      }
      out.at(i, j) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

double ssim(const ScalarMap& a, const ScalarMap& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  return ssim_with_range(a.data(), b.data(), a.height(), a.width(), joint_range(a.data(), b.data()));
}

double ssim(const FeatureGrid& a, const FeatureGrid& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  const double range = joint_range(a.data(), b.data());
  double total = 0.0;
  for (int ch = 0; ch < a.channels(); ++ch) {
    const ScalarMap sa = to_scalar_map(a, ch);
    const ScalarMap sb = to_scalar_map(b, ch);
    total += ssim_with_range(sa.data(), sb.data(), a.height(), a.width(), range);
  }
  return total / a.channels();
}

double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mean_squared_error: size mismatch");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_difference: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void write_pgm(const std::filesystem::path& path, const ScalarMap& m) {
  write_pgm_bytes(path, m.height(), m.width(), normalise_bytes(m.data()));
}

void write_pgm(const std::filesystem::path& path, const BinaryMap& m) {
  std::vector<double> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0 : 0.0;
  write_pgm_bytes(path, m.height(), m.width(), normalise_bytes(v));
}

}  // namespace depthvar
