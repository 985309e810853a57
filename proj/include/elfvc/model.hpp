#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elfvc/backbone.hpp"
#include "elfvc/codelayer.hpp"
#include "elfvc/motion.hpp"
#include "elfvc/ops.hpp"
#include "elfvc/params.hpp"
#include "elfvc/rateflex.hpp"
#include "elfvc/rng.hpp"

namespace elfvc {

// ----------------------------------------------------------- coder block ----

// One complete hyperprior coding block: main autoencoder E0/D0 (the coder
// stack), hyper pair E1/D1 producing the Gaussian model for q0, a learned
// per-channel sigma for q1 (whose mean is fixed at zero), and per-level
// quantization width tables for both codelayers.  The decode-side helpers
// (run_d1 / run_d0 / gaussian params) are the single code path used by both
// the encoder's closed loop and the decoder, which is what makes the two
// sides bit-identical.
struct CoderBlockConfig {
  std::string name;
  int data_channels = 0;      // E0 input channels (before the level map)
  int d0_extra_channels = 0;  // side channels concatenated into D0
  int out_channels = 0;       // D0 output channels at 4x
  int enc_dm = 32;            // encoder DM width
  int dec_dm = 16;            // decoder DM width
  int dm_inner = 3;
  int q0_channels = 32;
  int q1_channels = 16;
  int embed_dim = 8;
};

class CoderBlock {
 public:
  CoderBlock() = default;
  CoderBlock(const CoderBlockConfig& cfg, ParamRegistry& reg, Rng& rng);

  // ---- shared sub-paths (training and eval use the very same graphs) ----
  // data4: E0 input at 4x (normalized here, then the level map is attached).
  Var run_e0(const Var& data4, const LevelEmbedding& lv, bool update_stats);
  Var run_e1(const Var& q0_rep, const LevelEmbedding& lv, bool update_stats);
  Var run_d1(const Var& q1_rep, const LevelEmbedding& lv, int pixel_h, int pixel_w) const;
  // Splits D1 output into (mu, sigma) with softplus positivity + floor.
  std::pair<Var, Var> d1_gaussian(const Var& d1_out) const;
  Var run_d0(const Var& q0_rep, const std::vector<Var>& side,
             const LevelEmbedding& lv, int pixel_h, int pixel_w) const;
  // Per-channel q1 sigma broadcast to a (C1,h,w) or (B,C1,h,w) tensor.
  Var q1_sigma(int b, int h, int w) const;

  Var q0_widths(const LevelEmbedding& lv) const { return qw0_.widths(lv); }
  Var q1_widths(const LevelEmbedding& lv) const { return qw1_.widths(lv); }

  // ---- training pass (noise on the rate path, STE on the decode path) ----
  struct TrainOut {
    Var outputs;     // D0 output
    Var rate_bits;   // differentiable estimate, q0 + q1 together
  };
  TrainOut train_code(const Var& data4, const std::vector<Var>& d0_side,
                      const LevelEmbedding& lv, Rng& noise_rng,
                      int pixel_h, int pixel_w, bool update_stats);

  // ---- evaluation: real bitstreams, closed loop ----
  struct EncodeOut {
    Tensor outputs;
    std::vector<uint8_t> q1_bytes, q0_bytes;
    double est_bits = 0.0;    // exact codelength estimate (both layers)
    Codelayer q0, q1;
    GaussianParams p0;        // q0 model, for bit-map tooling
  };
  EncodeOut encode_eval(const Tensor& data4, const std::vector<Tensor>& d0_side,
                        const LevelEmbedding& lv, int pixel_h, int pixel_w);

  Tensor decode_eval(const std::vector<uint8_t>& q1_bytes,
                     const std::vector<uint8_t>& q0_bytes,
                     const std::vector<Tensor>& d0_side, const LevelEmbedding& lv,
                     int pixel_h, int pixel_w) const;

  // grid dims of the codelayers for a padded pixel frame
  std::vector<int> q0_shape(int pixel_h, int pixel_w) const;
  std::vector<int> q1_shape(int pixel_h, int pixel_w) const;
  GaussianParams q1_params(int h1, int w1) const;  // mu=0, learned sigma

  const CoderBlockConfig& config() const { return cfg_; }
  ChannelStats& e0_stats() { return norm_e0_; }
  ChannelStats& e1_stats() { return norm_e1_; }

 private:
  CoderBlockConfig cfg_;
  CoderStack stack_;
  Conv2dLayer e1a_, e1b_, e1head_;
  Conv2dLayer d1a_, d1b_, d1head_;
  QuantWidthTable qw0_, qw1_;
  Var sigma1_raw_;  // [q1_channels]
  ChannelStats norm_e0_, norm_e1_;
};

// ------------------------------------------------------------ codec model ----

struct ModelConfig {
  int levels = 4;
  int embed_dim = 8;
  int state_channels = 32;
  int q0_channels = 32;
  int q1_channels = 16;
  int enc_dm = 32;
  int dm_inner = 3;
  int dec_dm_iframe = 16;
  int dec_dm_flow = 8;
  int dec_dm_residue = 16;
  bool use_predictor = true;  // ablation switch: zero base flow when off
  ScaleSpaceConfig scale_space{5, 1.0};
  uint64_t init_seed = 1;
};

// Everything the decoder needs from a P-frame's past, kept in lockstep on
// both sides.
struct PFrameContext {
  Tensor prev_recon;       // (3,H,W)
  Tensor prev_prev_recon;  // (3,H,W)
  Tensor prev_flow;        // (3,H,W)
  Tensor state;            // (S, H/4, W/4)
};

class CodecModel {
 public:
  explicit CodecModel(const ModelConfig& cfg);

  // ---- training graphs ----
  struct IFrameTrain {
    Var recon;      // (3,H,W) in [0,1]
    Var state;      // (S,H/4,W/4)
    Var rate_bits;  // differentiable
  };
  IFrameTrain train_iframe(const Var& x, const LevelEmbedding& lv, Rng& noise_rng,
                           bool update_stats);

  struct PFrameTrain {
    Var recon;
    Var flow;       // f-hat, (3,H,W)
    Var state;
    Var flow_bits;     // flow block rate (differentiable)
    Var residue_bits;  // residue block rate
    Var rate_bits;     // sum of the two
  };
  PFrameTrain train_pframe(const Var& x, const Var& prev_recon,
                           const Var& prev_prev_recon, const Var& prev_flow,
                           const Var& state, const LevelEmbedding& lv,
                           Rng& noise_rng, bool update_stats);

  // ---- evaluation / real coding ----
  struct IFrameEncode {
    std::vector<uint8_t> q1_bytes, q0_bytes;
    Tensor recon, state;
    double est_bits = 0.0;
    CoderBlock::EncodeOut raw;  // codelayers + params for tooling
  };
  IFrameEncode encode_iframe(const Tensor& x, double level);

  struct IFrameDecode {
    Tensor recon, state;
  };
  IFrameDecode decode_iframe(const std::vector<uint8_t>& q1_bytes,
                             const std::vector<uint8_t>& q0_bytes, double level,
                             int pixel_h, int pixel_w);

  struct PFrameEncode {
    std::vector<uint8_t> flow_q1, flow_q0, res_q1, res_q0;
    Tensor recon, flow, state;
    double flow_est_bits = 0.0, res_est_bits = 0.0;
    CoderBlock::EncodeOut flow_raw, res_raw;
  };
  PFrameEncode encode_pframe(const Tensor& x, const PFrameContext& ctx, double level);

  struct PFrameDecode {
    Tensor recon, flow, state;
  };
  PFrameDecode decode_pframe(const std::vector<uint8_t>& flow_q1,
                             const std::vector<uint8_t>& flow_q0,
                             const std::vector<uint8_t>& res_q1,
                             const std::vector<uint8_t>& res_q0,
                             const PFrameContext& ctx, double level);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  CoderBlock& iframe_block() { return iframe_; }
  CoderBlock& flow_block() { return flow_; }
  CoderBlock& residue_block() { return residue_; }

  // Normalization statistics (and any other non-trainable buffers) that must
  // ship with the weights; name -> flat snapshot/restore.
  struct StatsEntry {
    std::string name;
    ChannelStats* stats;
  };
  std::vector<StatsEntry> stats_entries();

  LevelEmbedding embedding(double level) const {
    return embed_level(level, cfg_.levels, cfg_.embed_dim);
  }

 private:
  // Turns the flow block's D0 output into (f-hat, intermediate state),
  // shared verbatim by training, encoding, and decoding.
  struct FlowSplit {
    Var flow;        // combined f-hat (3,H,W)
    Var state;       // (S,H/4,W/4)
  };
  FlowSplit split_flow_output(const Var& d0_out, const Var& base_flow) const;

  struct ResidueSplit {
    Var residue;  // (3,H,W)
    Var state;
  };
  ResidueSplit split_residue_output(const Var& d0_out) const;

  Var base_flow(const Var& prev_flow, const Var& prev_prev_recon,
                const Var& prev_recon, const LevelEmbedding& lv) const;

  ModelConfig cfg_;
  ParamRegistry reg_;
  CoderBlock iframe_, flow_, residue_;
  FlowPredictor predictor_;
};

// Replicate-pad a (C,H,W) or (B,C,H,W) tensor on the bottom/right to the next
// multiples of `multiple`; crop undoes it.  The model requires pixel dims
// divisible by 4 (space-to-depth), so callers pad real frames first.
Tensor pad_to_multiple(const Tensor& t, int multiple);
Tensor crop_to(const Tensor& t, int h, int w);

}  // namespace elfvc
