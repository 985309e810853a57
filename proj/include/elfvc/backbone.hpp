#pragma once

#include <string>
#include <vector>

#include "elfvc/ops.hpp"
#include "elfvc/params.hpp"
#include "elfvc/rng.hpp"

namespace elfvc {

// A single 2D convolution with its parameters.
struct Conv2dLayer {
  Var w;  // (Co, Ci, k, k)
  Var b;  // (Co)
  int stride = 1;

  Var operator()(const Var& x) const { return ops::conv2d(x, w, b, stride); }
  int64_t param_count() const { return w->value.numel() + b->value.numel(); }
};

// He-style normal init scaled by `gain` (gain 0 gives an all-zero layer,
// used for heads that must start as the identity contribution).
Conv2dLayer make_conv(ParamRegistry& reg, const std::string& name, int in_ch,
                      int out_ch, int ksize, int stride, Rng& rng,
                      double gain = 1.0);

// ------------------------------------------------------------- DM block ----

struct DMBlockConfig {
  int channels = 0;     // C, base width
  int inner = 1;        // n, additive-accumulation convs
  int scale = 4;        // downsample factor vs. pixel space; power of 2, >= 4

  void validate() const;  // throws std::invalid_argument
};

// Delayed-merge block: a projection conv maps the input to C channels (a0),
// n convs run with additive accumulation (a_i = a_{i-1} + conv(act(a_{i-1}))),
// the intermediates a_1..a_n are concatenated exactly once, and a 1x1 conv
// reduces back down to C channels.
class DMBlock {
 public:
  DMBlock() = default;
  DMBlock(const DMBlockConfig& cfg, int in_channels, ParamRegistry& reg,
          const std::string& prefix, Rng& rng);

  // `at_scale` is the downsampling factor of x; a mismatch is rejected.
  Var operator()(const Var& x, int at_scale) const;

  const DMBlockConfig& config() const { return cfg_; }
  int64_t param_count() const;

 private:
  DMBlockConfig cfg_;
  Conv2dLayer proj_;                 // in -> C, 3x3
  std::vector<Conv2dLayer> inner_;   // C -> C, 3x3, n of them
  Conv2dLayer reduce_;               // n*C -> C, 1x1
};

// ------------------------------------------------------------ level map ----

// Appends the level vector (length Le) as Le constant channels tiled over
// the spatial dims of `input` (rank 3 or 4).
Var attach_level_map(const Var& input, const Var& level_vec);

// ----------------------------------------------------------- coder stack ----

struct CoderStackConfig {
  std::vector<DMBlockConfig> encoder;  // scales strictly doubling, first >= 4
  std::vector<DMBlockConfig> decoder;  // exact reverse of the encoder scales
  int in_channels = 0;                 // encoder input channels (at 4x)
  int out_channels = 0;                // decoder output channels (at 4x)
  int q0_channels = 0;                 // codelayer channels at the top scale
  int dec_in_channels = 0;             // decoder input channels at the top scale
  // Side-information channels (e.g. the propagated state) live at the 4x
  // scale, so they join the decoder by concatenation at its final 4x block
  // rather than at the top-scale input.
  int side_channels = 0;

  void validate() const;  // throws std::invalid_argument
};

// Asymmetric multi-scale autoencoder: DM blocks joined by stride-2 convs on
// the way down and nearest-neighbor upsample + conv on the way up.  All
// learned layers sit at scale >= 4; pixel-space handling (space-to-depth and
// the final output projection) is the caller's job.
class CoderStack {
 public:
  CoderStack() = default;
  CoderStack(const CoderStackConfig& cfg, ParamRegistry& reg,
             const std::string& prefix, Rng& rng);

  // x at 4x (spatial dims ceil(pixel/4)) -> q0 values at the top scale.
  Var encode(const Var& x) const;

  // q0 -> output at 4x.  `side` tensors (4x scale, side_channels total) are
  // concatenated at the final decoder block.  pixel_h/pixel_w give the
  // original frame dims so intermediate ceil-mode sizes can be reproduced.
  Var decode(const Var& q0, const std::vector<Var>& side, int pixel_h,
             int pixel_w) const;
  Var decode(const Var& q0, int pixel_h, int pixel_w) const {
    return decode(q0, {}, pixel_h, pixel_w);
  }

  const CoderStackConfig& config() const { return cfg_; }
  int64_t encoder_param_count() const;
  int64_t decoder_param_count() const;
  int top_scale() const { return cfg_.encoder.back().scale; }

 private:
  CoderStackConfig cfg_;
  std::vector<DMBlock> enc_blocks_;
  std::vector<Conv2dLayer> enc_down_;  // stride-2 3x3 between scales
  Conv2dLayer enc_head_;               // C_enc -> q0_channels, 3x3
  std::vector<DMBlock> dec_blocks_;
  std::vector<Conv2dLayer> dec_up_;    // 3x3 after each 2x upsample
  Conv2dLayer dec_head_;               // C_dec -> out_channels, 3x3
};

// ceil(a / b) for positive ints.
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace elfvc
