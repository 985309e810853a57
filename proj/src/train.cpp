#include "elfvc/train.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "elfvc/adam.hpp"
#include "elfvc/autodiff.hpp"
#include "elfvc/dataio.hpp"
#include "elfvc/ops.hpp"
#include "elfvc/pipeline.hpp"
#include "elfvc/rng.hpp"

namespace elfvc {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct FrameDims {
  int h = 0, w = 0;
};

FrameDims clip_dims(const std::vector<Tensor>& clip, int unroll) {
  check(static_cast<int>(clip.size()) >= unroll,
        "train: clip shorter than the unroll window");
  const Tensor& f0 = clip.front();
  check(f0.rank() == 3 && f0.shape[0] == 3, "train: frames must be (3,H,W)");
  const int h = f0.shape[1], w = f0.shape[2];
  check(h % 4 == 0 && w % 4 == 0, "train: frame dims must be multiples of 4");
  for (const Tensor& f : clip)
    check(f.same_shape(f0), "train: ragged frame shapes within a clip");
  return {h, w};
}

// One IPPP window: builds the unrolled graph, records per-frame loss terms,
// and reports the raw distortion values for the modulator.
struct WindowGraph {
  std::vector<FrameLossTerms> terms;
  std::vector<double> mse_values;  // per frame, same order
};

WindowGraph unroll_window(CodecModel& model, const std::vector<Tensor>& clip,
                          int start, const std::vector<int>& levels_seq,
                          Rng& noise_rng) {
  const ModelConfig& mc = model.config();
  const int unroll = static_cast<int>(levels_seq.size());
  const FrameDims d = clip_dims(clip, start + unroll);
  const double inv_pixels = 1.0 / (static_cast<double>(d.h) * d.w);

  WindowGraph g;
  Var x0 = constant(clip[start]);
  LevelEmbedding lv0 = embed_level(levels_seq[0], mc.levels, mc.embed_dim);
  auto it = model.train_iframe(x0, lv0, noise_rng, /*update_stats=*/true);
  Var d0 = ops::mse(it.recon, x0);
  g.terms.push_back({d0, ops::mul_scalar(it.rate_bits, inv_pixels),
                     levels_seq[0], 0});
  g.mse_values.push_back(d0->value.data[0]);

  Var prev = it.recon;
  Var prev_prev = it.recon;
  Var prev_flow = constant(Tensor::zeros({3, d.h, d.w}));
  Var state = it.state;
  for (int t = 1; t < unroll; ++t) {
    Var xt = constant(clip[start + t]);
    LevelEmbedding lv = embed_level(levels_seq[t], mc.levels, mc.embed_dim);
    auto pt = model.train_pframe(xt, prev, prev_prev, prev_flow, state, lv,
                                 noise_rng, /*update_stats=*/true);
    Var dt = ops::mse(pt.recon, xt);
    g.terms.push_back({dt, ops::mul_scalar(pt.rate_bits, inv_pixels),
                       levels_seq[t], t});
    g.mse_values.push_back(dt->value.data[0]);
    prev_prev = prev;
    prev = pt.recon;
    prev_flow = pt.flow;
    state = pt.state;
  }
  return g;
}

// Real coded probe on the log clip: constant-level encode per integer level,
// mean per-frame bpp and PSNR from actual record bytes.
void probe_levels(CodecModel& model, const std::vector<Tensor>& clip,
                  int unroll, int levels, TrainLogRow* row) {
  std::vector<Tensor> frames(clip.begin(), clip.begin() + unroll);
  for (int l = 0; l < levels; ++l) {
    EncodeOptions opts;
    opts.gop = unroll;
    opts.rc.mode = RateControlMode::kConstantLevel;
    opts.rc.levels = levels;
    opts.rc.constant_level = static_cast<double>(l);
    EncodeResult enc = encode_video(model, frames, opts);
    double bpp = 0.0, psnr = 0.0;
    for (const FrameStats& fs : enc.frames) {
      bpp += fs.bpp;
      psnr += fs.psnr_db;
    }
    const double n = static_cast<double>(enc.frames.size());
    row->level_bpp.push_back(bpp / n);
    row->level_psnr.push_back(psnr / n);
  }
}

}  // namespace

void TrainConfig::validate() const {
  check(steps >= 1, "TrainConfig: steps must be >= 1");
  check(batch >= 1, "TrainConfig: batch must be >= 1");
  check(unroll >= 2, "TrainConfig: unroll needs at least one P-frame");
  check(log_every >= 1, "TrainConfig: log_every must be >= 1");
  check(lr > 0.0, "TrainConfig: lr must be positive");
  check(lr_drop >= 1.0, "TrainConfig: lr_drop must be >= 1");
  check(drop1 > 0.0 && drop1 <= drop2 && drop2 <= 1.0,
        "TrainConfig: drops must satisfy 0 < drop1 <= drop2 <= 1");
}

TrainResult train_model(CodecModel& model,
                        const std::vector<std::vector<Tensor>>& clips,
                        const TrainConfig& cfg) {
  cfg.validate();
  check(!clips.empty(), "train: no clips");
  const ModelConfig& mc = model.config();
  check(cfg.lambda.levels == mc.levels,
        "train: lambda schedule levels must match the model");
  for (const auto& c : clips) clip_dims(c, cfg.unroll);

  TrainResult result;
  Rng rng(cfg.seed);
  ModulatorState mod(cfg.unroll, mc.levels, cfg.modulator);
  const ModulatorState identity_mod(cfg.unroll, mc.levels, cfg.modulator);
  Adam opt(model.params().vars(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  auto checkpoint = snapshot_model(model);
  int checkpoint_step = 0;
  auto abort_run = [&](const std::string& why) {
    restore_model(model, checkpoint);
    result.aborted = true;
    result.abort_reason = why;
    result.completed_steps = checkpoint_step;
    return result;
  };

  const int drop1_at = static_cast<int>(cfg.drop1 * cfg.steps);
  const int drop2_at = static_cast<int>(cfg.drop2 * cfg.steps);
  double interval_loss = 0.0;
  int interval_count = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    double lr = cfg.lr;
    if (step >= drop1_at) lr /= cfg.lr_drop;
    if (step >= drop2_at) lr /= cfg.lr_drop;
    opt.config().lr = lr;

    elfvc::zero_grad(opt.params());
    double step_loss = 0.0;
    bool bad = false;
    std::string why;
    for (int b = 0; b < cfg.batch && !bad; ++b) {
      const auto& clip = clips[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(clips.size()) - 1))];
      const int max_start = static_cast<int>(clip.size()) - cfg.unroll;
      const int start =
          max_start > 0 ? static_cast<int>(rng.uniform_int(0, max_start)) : 0;
      std::vector<int> levels_seq =
          sample_level_sequence(mc.levels, cfg.unroll, rng);
      WindowGraph g = unroll_window(model, clip, start, levels_seq, rng);
      for (double m : g.mse_values)
        if (!std::isfinite(m)) {
          bad = true;
          why = "non-finite distortion at step " + std::to_string(step);
          break;
        }
      if (bad) break;
      if (cfg.use_modulator)
        for (size_t t = 0; t < g.mse_values.size(); ++t)
          mod.observe(static_cast<int>(t), levels_seq[t], g.mse_values[t]);
      Var clip_loss = multi_level_loss(g.terms, cfg.lambda,
                                       cfg.use_modulator ? mod : identity_mod);
      const double v = clip_loss->value.data[0];
      if (!std::isfinite(v)) {
        bad = true;
        why = "non-finite loss at step " + std::to_string(step);
        break;
      }
      step_loss += v / cfg.batch;
      // Per-clip gradient accumulation keeps only one unrolled graph alive.
      backward(ops::mul_scalar(clip_loss, 1.0 / cfg.batch));
    }
    if (bad) return abort_run(why);
    std::string opt_err;
    if (!opt.step(&opt_err))
      return abort_run("rejected step " + std::to_string(step) + ": " + opt_err);

    interval_loss += step_loss;
    ++interval_count;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      TrainLogRow row;
      row.step = step + 1;
      row.lr = lr;
      row.mean_loss = interval_loss / interval_count;
      probe_levels(model, clips.front(), cfg.unroll, mc.levels, &row);
      for (int t = 0; t < cfg.unroll; ++t)
        for (int l = 0; l < mc.levels; ++l)
          row.mu.push_back(cfg.use_modulator ? mod.mu(t, l) : 1.0);
      result.log.push_back(std::move(row));
      interval_loss = 0.0;
      interval_count = 0;
      checkpoint = snapshot_model(model);
      checkpoint_step = step + 1;
    }
  }
  result.completed_steps = cfg.steps;
  return result;
}

std::string train_log_csv(const TrainResult& result) {
  std::ostringstream os;
  os << std::setprecision(10);
  if (result.log.empty()) return "step,lr,loss\n";
  const auto& first = result.log.front();
  const int levels = static_cast<int>(first.level_bpp.size());
  const int unroll =
      levels > 0 ? static_cast<int>(first.mu.size()) / levels : 0;
  os << "step,lr,loss";
  for (int l = 0; l < levels; ++l) os << ",bpp_l" << l;
  for (int l = 0; l < levels; ++l) os << ",psnr_l" << l;
  for (int t = 0; t < unroll; ++t)
    for (int l = 0; l < levels; ++l) os << ",mu_t" << t << "_l" << l;
  os << "\n";
  for (const auto& row : result.log) {
    os << row.step << "," << row.lr << "," << row.mean_loss;
    for (double v : row.level_bpp) os << "," << v;
    for (double v : row.level_psnr) os << "," << v;
    for (double v : row.mu) os << "," << v;
    os << "\n";
  }
  return os.str();
}

}  // namespace elfvc
