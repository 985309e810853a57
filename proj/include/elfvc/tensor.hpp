#pragma once

// Dense row-major tensor of doubles.  Image-like data is (C,H,W) or
// (B,C,H,W); training works in 64-bit floats throughout so that gradient
// checks are meaningful and coder probabilities are reproducible.

#include <cstdint>
#include <string>
#include <vector>

namespace elfvc {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);

  int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool empty() const { return data.empty(); }
  bool all_finite() const;
  double max_abs() const;

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  std::string shape_str() const;
};

// Normalized view of a (C,H,W) or (B,C,H,W) tensor; b == 1 for rank 3.
struct Chw {
  int b, c, h, w;
  int64_t plane() const { return static_cast<int64_t>(h) * w; }
  int64_t sample() const { return static_cast<int64_t>(c) * h * w; }
};

// Throws std::invalid_argument unless rank is 3 or 4.
Chw chw(const Tensor& t);

// Shape with c/h/w replaced, preserving the rank (and batch) of `like`.
std::vector<int> like_shape(const Tensor& like, int c, int h, int w);

int64_t checked_numel(const std::vector<int>& shape);

}  // namespace elfvc
