#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace orthoconv {

/// Dense row-major kernel tensor laid out as (c_out, c_in_per_group, kernel_h, kernel_w).
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int c_out, int c_in, int kh, int kw);
  Tensor4(int c_out, int c_in, int kh, int kw, std::vector<double> values);

  /// Identity map: channel-diagonal delta at the spatial center (or 1x1 when kh = kw = 1).
  static Tensor4 delta(int channels, int kh = 1, int kw = 1);

  int c_out() const noexcept { return dims_[0]; }
  int c_in() const noexcept { return dims_[1]; }
  int kh() const noexcept { return dims_[2]; }
  int kw() const noexcept { return dims_[3]; }
  const std::array<int, 4>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int o, int i, int y, int x) { return data_[index(o, i, y, x)]; }
  double operator()(int o, int i, int y, int x) const { return data_[index(o, i, y, x)]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Tensor4& operator+=(const Tensor4& other);
  Tensor4& operator-=(const Tensor4& other);
  Tensor4& operator*=(double s);

  double frobenius_norm() const;
  std::string shape_string() const;

 private:
  std::size_t index(int o, int i, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(o) * dims_[1] + i) * dims_[2] + y) * dims_[3] + x;
  }

  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

Tensor4 operator+(Tensor4 a, const Tensor4& b);
Tensor4 operator-(Tensor4 a, const Tensor4& b);
Tensor4 operator*(double s, Tensor4 a);

/// Rank-3 feature map (channels, height, width).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int h, int w);
  FeatureMap(int channels, int h, int w, std::vector<double> values);

  int channels() const noexcept { return dims_[0]; }
  int height() const noexcept { return dims_[1]; }
  int width() const noexcept { return dims_[2]; }
  const std::array<int, 3>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  FeatureMap& operator+=(const FeatureMap& other);
  FeatureMap& operator-=(const FeatureMap& other);
  FeatureMap& operator*=(double s);

  double norm() const;
  std::string shape_string() const;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x;
  }

  std::array<int, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

FeatureMap operator+(FeatureMap a, const FeatureMap& b);
FeatureMap operator-(FeatureMap a, const FeatureMap& b);
FeatureMap operator*(double s, FeatureMap a);

double dot(const FeatureMap& a, const FeatureMap& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

/// Shape of a feature map without its data.
struct MapShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

inline MapShape shape_of(const FeatureMap& x) { return {x.channels(), x.height(), x.width()}; }

}  // namespace orthoconv
