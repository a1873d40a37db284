#include "orthoconv/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orthoconv/core/errors.hpp"

namespace orthoconv {

namespace {

void require_positive(std::initializer_list<int> dims, const char* what) {
  for (int d : dims) {
    if (d < 1) throw ShapeError(std::string(what) + ": every dimension must be >= 1");
  }
}

}  // namespace

Tensor4::Tensor4(int c_out, int c_in, int kh, int kw) : dims_{c_out, c_in, kh, kw} {
  require_positive({c_out, c_in, kh, kw}, "Tensor4");
  data_.assign(static_cast<std::size_t>(c_out) * c_in * kh * kw, 0.0);
}

Tensor4::Tensor4(int c_out, int c_in, int kh, int kw, std::vector<double> values)
    : dims_{c_out, c_in, kh, kw}, data_(std::move(values)) {
  require_positive({c_out, c_in, kh, kw}, "Tensor4");
  if (data_.size() != static_cast<std::size_t>(c_out) * c_in * kh * kw)
    throw ShapeError("Tensor4: value count does not match shape " + shape_string());
}

Tensor4 Tensor4::delta(int channels, int kh, int kw) {
  Tensor4 k(channels, channels, kh, kw);
  for (int c = 0; c < channels; ++c) k(c, c, (kh - 1) / 2, (kw - 1) / 2) = 1.0;
  return k;
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
  if (dims_ != other.dims_) throw ShapeError("Tensor4 +: " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator-=(const Tensor4& other) {
  if (dims_ != other.dims_) throw ShapeError("Tensor4 -: " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Tensor4::frobenius_norm() const {
  return std::sqrt(std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0));
}

std::string Tensor4::shape_string() const {
  return "(" + std::to_string(dims_[0]) + ", " + std::to_string(dims_[1]) + ", " +
         std::to_string(dims_[2]) + ", " + std::to_string(dims_[3]) + ")";
}

Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
Tensor4 operator*(double s, Tensor4 a) { return a *= s; }

FeatureMap::FeatureMap(int channels, int h, int w) : dims_{channels, h, w} {
  require_positive({channels, h, w}, "FeatureMap");
  data_.assign(static_cast<std::size_t>(channels) * h * w, 0.0);
}

FeatureMap::FeatureMap(int channels, int h, int w, std::vector<double> values)
    : dims_{channels, h, w}, data_(std::move(values)) {
  require_positive({channels, h, w}, "FeatureMap");
  if (data_.size() != static_cast<std::size_t>(channels) * h * w)
    throw ShapeError("FeatureMap: value count does not match shape " + shape_string());
}

FeatureMap& FeatureMap::operator+=(const FeatureMap& other) {
  if (dims_ != other.dims_) throw ShapeError("FeatureMap +: " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

FeatureMap& FeatureMap::operator-=(const FeatureMap& other) {
  if (dims_ != other.dims_) throw ShapeError("FeatureMap -: " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

FeatureMap& FeatureMap::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double FeatureMap::norm() const {
  return std::sqrt(std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0));
}

std::string FeatureMap::shape_string() const {
  return "(" + std::to_string(dims_[0]) + ", " + std::to_string(dims_[1]) + ", " +
         std::to_string(dims_[2]) + ")";
}

FeatureMap operator+(FeatureMap a, const FeatureMap& b) { return a += b; }
FeatureMap operator-(FeatureMap a, const FeatureMap& b) { return a -= b; }
FeatureMap operator*(double s, FeatureMap a) { return a *= s; }

double dot(const FeatureMap& a, const FeatureMap& b) {
  if (a.dims() != b.dims()) throw ShapeError("dot: " + a.shape_string() + " vs " + b.shape_string());
  const auto va = a.values();
  const auto vb = b.values();
  return std::inner_product(va.begin(), va.end(), vb.begin(), 0.0);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace orthoconv
