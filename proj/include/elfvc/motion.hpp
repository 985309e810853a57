#pragma once

#include <vector>

#include "elfvc/backbone.hpp"
#include "elfvc/ops.hpp"
#include "elfvc/params.hpp"

namespace elfvc {

// Blur pyramid used by the scale-space warp: level 0 is the source frame,
// level i >= 1 is blurred with sigma0 * 2^(i-1) (so [0, s, 2s, 4s, ...]).
struct ScaleSpaceConfig {
  int levels = 5;
  double sigma0 = 1.0;
};

std::vector<double> scale_space_sigmas(const ScaleSpaceConfig& cfg);

// Gaussian blur with clamp-to-edge borders, applied per channel (rank 3/4).
// Separable; kernel radius ceil(3*sigma).  sigma == 0 returns the input.
Tensor gaussian_blur_clamped(const Tensor& img, double sigma);

// The full pyramid, one tensor per level.
std::vector<Tensor> scale_space_volume(const Tensor& frame, const ScaleSpaceConfig& cfg);

// Trilinear scale-space warp.  `image` is (C,H,W) or (B,C,H,W); `flow` has 3
// channels (dx, dy, sigma_idx) with matching batch/spatial dims.  Each output
// pixel samples the blur volume of `image` at (x + dx, y + dy, sigma_idx),
// with sigma_idx clamped to [0, levels-1] and bilinear clamp-to-edge in
// space.  Differentiable in the image and all three flow channels.
Var scale_space_warp(const Var& image, const Var& flow,
                     const ScaleSpaceConfig& cfg = {});

// f = mask * base + delta, broadcasting the 1-channel mask over the three
// flow channels.
Var combine_flow(const Var& base, const Var& mask, const Var& delta);

// In-loop base-flow predictor.  Consumes only already-decoded data (previous
// flow, two previous reconstructions, level vector), so encoder and decoder
// can run it in lockstep without spending bits.  Two DM paths (4x and 8x)
// are fused and a zero-initialized head emits the base flow, so an untrained
// predictor outputs exactly zero flow.
class FlowPredictor {
 public:
  FlowPredictor() = default;
  FlowPredictor(ParamRegistry& reg, const std::string& prefix,
                int level_channels, Rng& rng);

  // prev_flow: 3 pixel-space channels; recons: pixel-space frames (C must
  // match construction-time assumptions: 3 each); level: [Le] vector.
  // Returns a 3-channel pixel-space base flow.
  Var operator()(const Var& prev_flow, const Var& recon_tm2,
                 const Var& recon_tm1, const Var& level) const;

  int64_t param_count() const;

 private:
  DMBlock path4_;       // at 4x
  Conv2dLayer down_;    // 4x -> 8x, stride 2
  DMBlock path8_;       // at 8x
  Conv2dLayer up_;      // conv after 2x upsample back to 4x
  Conv2dLayer fuse_;    // 1x1 on the fused pair
  Conv2dLayer head_;    // zero-init, emits 48 = 3*16 channels at 4x
};

}  // namespace elfvc
