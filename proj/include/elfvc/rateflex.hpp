#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "elfvc/ops.hpp"
#include "elfvc/params.hpp"
#include "elfvc/rng.hpp"

namespace elfvc {

// -------------------------------------------------------- level embedding ----

// Piecewise-linear embedding of a continuous level l in [0, L-1] into an
// Le-dimensional space: s = l*(Le-1)/(L-1); the two adjacent one-hot slots
// floor(s) and floor(s)+1 are blended with weights (1 - frac, frac).  At
// most two adjacent entries are nonzero and they sum to 1.
struct LevelEmbedding {
  std::vector<double> v;       // the Le blend weights
  double source_level = 0.0;   // l after clamping
  bool clamped = false;        // l fell outside [0, L-1]
  // derivation scratch, kept for introspection
  double s = 0.0, du = 0.0, dv = 0.0, alpha = 0.0, beta = 0.0;
  int u = 0, vslot = 0;
};

LevelEmbedding embed_level(double l, int levels, int embed_dim);

// 8.8 fixed-point level transport: what the bitstream carries, so encoder
// and decoder derive bit-identical embeddings.
uint16_t level_to_fixed(double l);
double fixed_to_level(uint16_t fx);  // exact: fx / 256
double snap_level_down(double l);
double snap_level_up(double l);

// ------------------------------------------------------ quantization widths ----

// Learned log-widths, one row per embedding slot, one column per codelayer
// channel.  Widths are exp(v_l · logw), hence always positive and
// log-linear along the level axis.
class QuantWidthTable {
 public:
  QuantWidthTable() = default;
  // Rows initialized log-spaced from `width_coarse` (slot 0, low rate) down
  // to `width_fine` (top slot, high rate), identical across channels.
  QuantWidthTable(ParamRegistry& reg, const std::string& name, int embed_dim,
                  int channels, double width_coarse = 2.0, double width_fine = 0.5);

  // [C] positive widths for a level embedding; differentiable into the table.
  Var widths(const LevelEmbedding& lv) const;

  Var log_table() const { return logw_; }
  int embed_dim() const { return le_; }
  int channels() const { return c_; }

 private:
  Var logw_;  // [Le, C]
  int le_ = 0, c_ = 0;
};

// ------------------------------------------------------------ λ schedule ----

// Regularization weight per level, log-linear and strictly decreasing from
// 10^log10_at_l0 (level 0, lowest rate) to 10^log10_at_top.
struct LambdaSchedule {
  int levels = 4;
  double log10_at_l0 = -1.5;
  double log10_at_top = -3.5;

  double at(double l) const;  // continuous in [0, levels-1]
};

// -------------------------------------------------------------- modulator ----

struct ModulatorConfig {
  double step = 0.01;       // per-update increment
  double decay = 0.99;      // MSE moving-average decay
  double factor = 1.5;      // f(δ): MSE ratio equivalent of the PSNR slack
  double clip_lo = 1.0;
  double clip_hi = 10.0;
  int64_t warmup = 200;     // observations before μ starts moving
};

// PSNR slack δ (dB) <-> MSE factor f(δ) = 10^(δ/10).
double modulator_factor_from_db(double delta_db);
double modulator_db_from_factor(double factor);

// Per (frame-index, level) loss weights μ with their MSE moving averages.
// Row t=0 (the I-frame) is the reference: its μ is pinned at 1 and only its
// average moves.  A P-frame row drifts up while its average MSE exceeds the
// I-frame's by more than f(δ), down otherwise, clipped to [1, 10].
class ModulatorState {
 public:
  ModulatorState(int max_frames, int levels, ModulatorConfig cfg = {});

  void observe(int t, int level, double mse);
  double mu(int t, int level) const;
  double average_mse(int t, int level) const;
  int64_t observations(int t, int level) const;
  const ModulatorConfig& config() const { return cfg_; }

 private:
  int64_t idx(int t, int level) const;
  ModulatorConfig cfg_;
  int tmax_ = 0, levels_ = 0;
  std::vector<double> mu_, avg_;
  std::vector<int64_t> count_;
};

// -------------------------------------------------------- multi-level loss ----

struct FrameLossTerms {
  Var distortion;  // scalar MSE
  Var rate;        // scalar codelength (caller chooses units; λ must match)
  int level = 0;
  int frame_index = 0;  // 0 = I-frame
};

// (1/T) Σ_t [ μ_t^(l_t) · D_t + λ^(l_t) · R_t ]
Var multi_level_loss(const std::vector<FrameLossTerms>& frames,
                     const LambdaSchedule& lambda, const ModulatorState& mod);

// ---------------------------------------------------------- level sampling ----

// One random-walk step: round(prev + v) clipped to [0, levels-1].
int level_walk_step(int prev, double v, int levels);

// l_0 uniform; l_t = l_{t-1} + v_t with v_t ~ N(0, 0.5), rounded and clipped.
std::vector<int> sample_level_sequence(int levels, int frames, Rng& rng);

// ------------------------------------------------------------ rate control ----

enum class RateControlMode { kConstantLevel, kMaxBpp, kMinQuality };

struct RateControlConfig {
  RateControlMode mode = RateControlMode::kConstantLevel;
  int levels = 4;
  double constant_level = 0.0;
  double ibpp_cap = 0.081;   // max-bpp caps per frame type
  double pbpp_cap = 0.037;
  double min_psnr_db = 37.0;
  int bisect_iters = 8;
};

struct ProbeResult {
  double bpp = 0.0;
  double psnr_db = 0.0;
};

struct RateDecision {
  double level = 0.0;       // snapped to the 8.8 grid
  uint16_t level_fx = 0;
  ProbeResult probe;        // measured at the chosen level
  bool violated = false;    // constraint unsatisfiable even at the fallback
};

// Picks the level for one frame.  `probe` encodes the frame at a candidate
// level against the committed past and reports (bpp, psnr).  max-bpp walks
// to the highest level under the cap (monotone bisection), min-quality to
// the lowest level at or above the PSNR target; infeasible constraints fall
// back (level 0 resp. levels-1) and set `violated` instead of aborting.
RateDecision rate_control_frame(const RateControlConfig& cfg, bool is_iframe,
                                const std::function<ProbeResult(double)>& probe);

}  // namespace elfvc
