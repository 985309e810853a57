#include "elfvc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace elfvc {

int64_t checked_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  int64_t n = checked_numel(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.data) x = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  int64_t n = checked_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor payload size does not match shape");
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data) {
    double a = std::fabs(x);
    if (a > m) m = a;
  }
  return m;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Chw chw(const Tensor& t) {
  if (t.rank() == 3) return {1, t.shape[0], t.shape[1], t.shape[2]};
  if (t.rank() == 4) return {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
  throw std::invalid_argument("expected a (C,H,W) or (B,C,H,W) tensor, got " +
                              t.shape_str());
}

std::vector<int> like_shape(const Tensor& like, int c, int h, int w) {
  if (like.rank() == 4) return {like.shape[0], c, h, w};
  return {c, h, w};
}

}  // namespace elfvc
