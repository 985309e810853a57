#pragma once

// Differentiable tensor ops.  All ops accept (C,H,W) or (B,C,H,W) inputs and
// preserve the input rank.  Shape mismatches and invalid configurations are
// rejected with std::invalid_argument naming the offending shapes.

#include <cstdint>
#include <vector>

#include "elfvc/autodiff.hpp"
#include "elfvc/tensor.hpp"

namespace elfvc {

class Rng;

// Running per-channel statistics used by channel_normalize.  Moving averages
// update only while training and unfrozen; `frozen` latches to true as soon
// as step_count reaches freeze_after, after which the call is a pure read.
struct ChannelStats {
  Tensor mean;  // [C]
  Tensor var;   // [C]
  int64_t step_count = 0;
  bool frozen = false;
  double decay = 0.99;
  double eps = 1e-5;
  int64_t freeze_after = 2000;

  static ChannelStats create(int channels);
};

namespace ops {

// Global instrumentation counters (single-threaded trainer).
struct Counters {
  int64_t concat_calls = 0;
};
Counters& counters();

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var vexp(const Var& a);
Var square(const Var& a);
Var clamp01(const Var& a);          // zero gradient outside [0,1]
Var stop_gradient(const Var& a);

// ---- reductions ----
Var sum(const Var& a);               // -> scalar
Var mean(const Var& a);              // -> scalar
Var mse(const Var& a, const Var& b); // mean squared error -> scalar
// sum(a * w) with constant weights; handy for probing directional derivatives.
Var weighted_sum(const Var& a, const Tensor& w);

// ---- structure ----
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& a, int c0, int c1);  // [c0, c1)
// Nearest-neighbor 2x upsample, cropped to (out_h, out_w) which must be
// 2*H or 2*H-1 (same for width).
Var upsample_nearest2(const Var& a, int out_h, int out_w);
Var space_to_depth(const Var& a, int factor);
Var depth_to_space(const Var& a, int factor);

// ---- conv ----
// x: (B,Ci,H,W)|(Ci,H,W); w: (Co,Ci,kh,kw) odd kernels; b: (Co) or null.
// Output spatial dims are ceil(H/stride) x ceil(W/stride); the input is
// zero-padded, split evenly with the extra pixel on the bottom/right.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride);

// ---- normalization ----
// y = (x - mean_c) / sqrt(var_c + eps).  While `training` and not frozen the
// batch moments update the moving averages first and the fresh averages are
// applied; the backward pass treats the statistics as constants.
Var channel_normalize(const Var& x, ChannelStats& stats, bool training);

// ---- per-channel scaling / quantization surrogates ----
// widths is a [C] vector (one positive width per channel of x).
Var scale_channels(const Var& x, const Var& widths);
// Rounded grid value w*round(x/w) with half-away-from-zero ties.  Gradients:
// identity to x (straight-through); d/dw is the grid index, so widths feel
// the reconstruction cost of coarser grids.
Var ste_quantize(const Var& x, const Var& widths);
// x + w*n with n a constant noise field (drawn once per call site from
// U(-1/2, 1/2)); the additive surrogate used on the rate path.
Var add_scaled_noise(const Var& x, const Var& widths, const Tensor& noise);
// Row mix of a [R,C] table with constant weights -> [C].
Var lincomb_rows(const Var& table, const std::vector<double>& weights);

// Broadcast a [C] vector to a constant [C,h,w] slab (b == 0) or [b,C,h,w].
// Gradients sum back over the broadcast positions.
Var tile_vector2d(const Var& v, int b, int h, int w);

// value helpers
Tensor uniform_noise_like(const Tensor& t, ::elfvc::Rng& rng);

}  // namespace ops

// Terse graph-building sugar.
inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }

}  // namespace elfvc
