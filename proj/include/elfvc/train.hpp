#pragma once

// Training driver: IPPP unrolls over short clips with sampled level
// sequences, the multi-level rate-distortion loss (rate in bits per pixel),
// dynamic loss modulation, Adam with staged learning-rate drops, and
// abort-to-last-checkpoint on a non-finite loss.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "elfvc/model.hpp"
#include "elfvc/rateflex.hpp"
#include "elfvc/tensor.hpp"

namespace elfvc {

struct TrainConfig {
  int steps = 900;       // total optimizer steps
  int batch = 2;         // clips per step
  int unroll = 4;        // frames per window: one I plus unroll-1 P
  int log_every = 50;    // steps per log row (one "epoch" of the log)
  double lr = 1e-4;
  double lr_drop = 5.0;  // stage divisor
  double drop1 = 0.80;   // first drop, as a fraction of total steps
  double drop2 = 0.95;   // second drop
  uint64_t seed = 1;
  bool use_modulator = true;  // off: mu stays identically 1 (ablation)
  ModulatorConfig modulator{};
  LambdaSchedule lambda{};  // levels here must match the model

  void validate() const;  // throws std::invalid_argument
};

struct TrainLogRow {
  int step = 0;  // optimizer steps completed at the time of the row
  double lr = 0.0;
  double mean_loss = 0.0;          // mean over the interval
  std::vector<double> level_bpp;   // probe clip, real coded bits, per level
  std::vector<double> level_psnr;  // probe clip mean PSNR, per level
  std::vector<double> mu;          // modulator table, unroll x levels row-major
};

struct TrainResult {
  bool aborted = false;
  std::string abort_reason;  // set when aborted
  int completed_steps = 0;
  std::vector<TrainLogRow> log;
};

// Optimizes the model in place.  Every clip is a sequence of (3,H,W) frames
// in [0,1] with identical dims (multiples of 4) and at least cfg.unroll
// frames.  A checkpoint is taken at every log row; if a loss or gradient
// goes non-finite the model is restored to the last checkpoint and the
// result reports aborted with completed_steps at that checkpoint.
TrainResult train_model(CodecModel& model,
                        const std::vector<std::vector<Tensor>>& clips,
                        const TrainConfig& cfg);

// Log rows as CSV: step,lr,loss,bpp_l<k>...,psnr_l<k>...,mu_t<t>_l<k>...
std::string train_log_csv(const TrainResult& result);

}  // namespace elfvc
