// SPDX-License-Identifier: Apache-2.0
//
// Dense real grids and the image-analysis helpers shared by every stage of
// the dynamic-depth pipeline.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace depthvar {

/// h x w x c real tensor stored row-major in (m, n, channel) order.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(int height, int width, int channels, double fill = 0.0);
  FeatureGrid(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int positions() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int m, int n, int ch) { return data_[index(m, n, ch)]; }
  double at(int m, int n, int ch) const { return data_[index(m, n, ch)]; }

  std::span<double> pixel(int m, int n) {
    return {data_.data() + index(m, n, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const double> pixel(int m, int n) const {
    return {data_.data() + index(m, n, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<double> pixel(int flat) {
    return {data_.data() + static_cast<std::size_t>(flat) * channels_,
            static_cast<std::size_t>(channels_)};
  }
  std::span<const double> pixel(int flat) const {
    return {data_.data() + static_cast<std::size_t>(flat) * channels_,
            static_cast<std::size_t>(channels_)};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const FeatureGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const;

  FeatureGrid& operator+=(const FeatureGrid& other);
  FeatureGrid& operator-=(const FeatureGrid& other);
  FeatureGrid& operator*=(double s);

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t index(int m, int n, int ch) const {
    return (static_cast<std::size_t>(m) * width_ + n) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

FeatureGrid operator+(FeatureGrid a, const FeatureGrid& b);
FeatureGrid operator-(FeatureGrid a, const FeatureGrid& b);
FeatureGrid operator*(FeatureGrid a, double s);

/// Single-channel real map (decision ranks, percentiles, depth scores).
class ScalarMap {
 public:
  ScalarMap() = default;
  ScalarMap(int height, int width, double fill = 0.0);
  ScalarMap(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double& at(int m, int n) { return data_[static_cast<std::size_t>(m) * width_ + n]; }
  double at(int m, int n) const { return data_[static_cast<std::size_t>(m) * width_ + n]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const ScalarMap&, const ScalarMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// {0,1}-valued spatial map.
class BinaryMap {
 public:
  BinaryMap() = default;
  BinaryMap(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  bool at(int m, int n) const { return data_[static_cast<std::size_t>(m) * width_ + n] != 0; }
  void set(int m, int n, bool v) { data_[static_cast<std::size_t>(m) * width_ + n] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  std::size_t count() const;
  std::span<const std::uint8_t> data() const { return data_; }

  friend bool operator==(const BinaryMap&, const BinaryMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

ScalarMap to_scalar_map(const FeatureGrid& g, int channel);
FeatureGrid to_feature_grid(const ScalarMap& s);
/// Mean over channels at each position.
ScalarMap channel_mean(const FeatureGrid& g);

/// Bilinear resampling with half-pixel (align-corners-false) coordinates.
/// Source coordinates below zero are clamped, so border rows replicate.
FeatureGrid bilinear_resize(const FeatureGrid& g, int out_height, int out_width);
ScalarMap bilinear_resize(const ScalarMap& s, int out_height, int out_width);

/// Per-pixel Sobel gradient magnitude with replicate padding. Needs >= 3x3.
ScalarMap sobel_magnitude(const ScalarMap& m);

/// Mean windowed SSIM (8x8 window clipped to the map, stride 1). Constants
/// are derived from the joint dynamic range of the pair.
double ssim(const ScalarMap& a, const ScalarMap& b);
/// Channel-averaged SSIM; the dynamic range is taken over all channels.
double ssim(const FeatureGrid& a, const FeatureGrid& b);

double mean_squared_error(std::span<const double> a, std::span<const double> b);
double max_abs_difference(std::span<const double> a, std::span<const double> b);

/// 8-bit binary PGM (P5), min-max normalised. A constant map writes zeros.
void write_pgm(const std::filesystem::path& path, const ScalarMap& m);
void write_pgm(const std::filesystem::path& path, const BinaryMap& m);

}  // namespace depthvar
