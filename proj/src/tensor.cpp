#include "lip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lip {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e == 0) throw ShapeError("tensor extent must be positive, got shape " + shape_to_string(s));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t{Shape{}};
  t.data_[0] = v;
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::random_normal(Shape shape, std::mt19937_64& rng, double mean, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::max(m, v);
  return m;
}

Tensor& Tensor::fill(double v) {
  std::fill(data_.begin(), data_.end(), v);
  return *this;
}

Tensor& Tensor::scale(double a) {
  for (auto& v : data_) v *= a;
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double a) {
  require_same_shape(*this, other, "add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
  return *this;
}

Tensor& Tensor::clamp_min(double lo) {
  for (auto& v : data_) v = std::max(v, lo);
  return *this;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "operator+");
  Tensor out(a.shape_);
  for (std::size_t i = 0; i < a.data_.size(); ++i) out.data_[i] = a.data_[i] + b.data_[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "operator-");
  Tensor out(a.shape_);
  for (std::size_t i = 0; i < a.data_.size(); ++i) out.data_[i] = a.data_[i] - b.data_[i];
  return out;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  out.scale(s);
  return out;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != data_.size()) {
    throw ShapeError("reshape to " + shape_to_string(new_shape) + " changes element count");
  }
  return Tensor(std::move(new_shape), data_);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace lip
