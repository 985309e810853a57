#pragma once

// Quantized latents ("codelayers") and their entropy coding.
//
// A codelayer stores integer grid indices; the real value of element i in
// channel c is symbol[i] * width[c].  Probabilities come from a per-element
// Gaussian evaluated as CDF differences over one grid step, floored at
// kMinProb, which is exactly the resolution of the range coder's frequency
// tables.  Channels are coded in independent groups of eight so groups could
// be processed concurrently; bytes are always concatenated in group order.

#include <cstdint>
#include <vector>

#include "elfvc/autodiff.hpp"
#include "elfvc/tensor.hpp"

namespace elfvc {

inline constexpr double kMinProb = 1.0 / 65536.0;  // 2^-16
inline constexpr double kMinSigma = 1e-3;
inline constexpr int kGridLimit = 255;    // symbols beyond +-255 escape
inline constexpr int kChannelsPerGroup = 8;

struct Codelayer {
  std::vector<int> shape;         // (C,H,W)
  std::vector<int32_t> symbols;   // grid indices, C*H*W
  std::vector<double> widths;     // per-channel positive grid step

  int channels() const { return shape[0]; }
  int height() const { return shape[1]; }
  int width() const { return shape[2]; }
  int64_t numel() const { return static_cast<int64_t>(symbols.size()); }
  Tensor values() const;          // symbol * width per element
  bool operator==(const Codelayer& o) const;
};

// Per-element Gaussian model; mu/sigma have the codelayer's (C,H,W) shape.
struct GaussianParams {
  Tensor mu;
  Tensor sigma;
};

// Snap to the per-channel grid, ties half away from zero.  Input rank 3.
Codelayer quantize(const Tensor& x, const std::vector<double>& widths);
Codelayer quantize(const Tensor& x, double width);

// P(grid value q | mu, sigma, width): CDF mass of one grid step, floored at
// kMinProb.  sigma is clamped up to kMinSigma.  `q` is the real value, not
// the grid index.
double discrete_gaussian_prob(double q, double mu, double sigma, double width);
// Same without the floor (the full-grid mass telescopes to exactly 1).
double discrete_gaussian_prob_unfloored(double q, double mu, double sigma,
                                        double width);

// Estimated bits: sum of -log2(floored prob) over all elements.
double codelength_bits(const Codelayer& layer, const GaussianParams& params);

// Differentiable codelength for training.  `values` holds continuous
// surrogates (noisy latents), mu/sigma the model, widths the per-channel grid
// step; gradients flow to all four.  Elements whose probability hits the
// floor contribute a constant 16 bits and zero gradient.
Var codelength_bits_op(const Var& values, const Var& mu, const Var& sigma,
                       const Var& widths);

// Entropy-coded payload: u8 group count, then per group a u32 byte length
// and the group's bytes.  Symbols outside the +-kGridLimit window are sent
// as an escape symbol plus 32 raw bits.
std::vector<uint8_t> range_encode(const Codelayer& layer,
                                  const GaussianParams& params);

// Exact inverse of range_encode given identical params/shape/widths.
// Throws std::runtime_error on malformed framing.
Codelayer range_decode(const std::vector<uint8_t>& bytes,
                       const std::vector<int>& shape,
                       const std::vector<double>& widths,
                       const GaussianParams& params);

// Worst-case coder overhead in bits for a payload with `groups` groups.
inline double overhead_bound_bits(int groups) { return 32.0 * groups + 16.0; }
inline int group_count(int channels) {
  return (channels + kChannelsPerGroup - 1) / kChannelsPerGroup;
}

// Where the bits land spatially: per-cell bits summed over channels, spread
// uniformly over each cell's pixel footprint so the map total equals the
// codelength estimate.
struct BitAllocationMap {
  Tensor map;         // (H,W), bits per pixel
  double total_bits;
};
BitAllocationMap spatial_bit_map(const Codelayer& q0, const GaussianParams& p0,
                                 const Codelayer& q1, const GaussianParams& p1,
                                 int frame_h, int frame_w);

}  // namespace elfvc
