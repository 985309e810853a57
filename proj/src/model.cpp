#include "elfvc/model.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace elfvc {

namespace {

// softplus(x) = 1 at this raw value, so q1 sigmas start at 1.
constexpr double kSigmaRawInit = 0.5413248546129181;

Var level_var(const LevelEmbedding& lv) {
  return constant(Tensor::from({static_cast<int>(lv.v.size())}, lv.v));
}

std::vector<double> as_vector(const Tensor& t) {
  return std::vector<double>(t.data.begin(), t.data.end());
}

void check_pixel_dims(int h, int w) {
  if (h <= 0 || w <= 0 || h % 4 != 0 || w % 4 != 0) {
    throw std::invalid_argument("pixel dims must be positive multiples of 4, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

// ------------------------------------------------------------ coder block ----

CoderBlock::CoderBlock(const CoderBlockConfig& cfg, ParamRegistry& reg, Rng& rng)
    : cfg_(cfg),
      stack_(
          [&] {
            CoderStackConfig sc;
            sc.encoder = {DMBlockConfig{cfg.enc_dm, cfg.dm_inner, 4},
                          DMBlockConfig{cfg.enc_dm, cfg.dm_inner, 8},
                          DMBlockConfig{cfg.enc_dm, cfg.dm_inner, 16}};
            sc.decoder = {DMBlockConfig{cfg.dec_dm, cfg.dm_inner, 16},
                          DMBlockConfig{cfg.dec_dm, cfg.dm_inner, 8},
                          DMBlockConfig{cfg.dec_dm, cfg.dm_inner, 4}};
            sc.in_channels = cfg.data_channels + cfg.embed_dim;
            sc.out_channels = cfg.out_channels;
            sc.q0_channels = cfg.q0_channels;
            sc.dec_in_channels = cfg.q0_channels + cfg.embed_dim;
            sc.side_channels = cfg.d0_extra_channels;  // joins at the 4x block
            return sc;
          }(),
          reg, cfg.name + ".stack", rng),
      qw0_(reg, cfg.name + ".qw0", cfg.embed_dim, cfg.q0_channels),
      qw1_(reg, cfg.name + ".qw1", cfg.embed_dim, cfg.q1_channels),
      norm_e0_(ChannelStats::create(cfg.data_channels)),
      norm_e1_(ChannelStats::create(cfg.q0_channels)) {
  // Hyper pair.  E1 runs two stride-2 convs on top of the q0 grid (16x ->
  // 64x); D1 mirrors them with nearest upsampling and emits mean and raw
  // sigma for every q0 channel.
  e1a_ = make_conv(reg, cfg.name + ".e1a", cfg.q0_channels + cfg.embed_dim, 24, 3, 2, rng);
  e1b_ = make_conv(reg, cfg.name + ".e1b", 24, 16, 3, 2, rng);
  e1head_ = make_conv(reg, cfg.name + ".e1head", 16, cfg.q1_channels, 3, 1, rng);
  d1a_ = make_conv(reg, cfg.name + ".d1a", cfg.q1_channels + cfg.embed_dim, 24, 3, 1, rng);
  d1b_ = make_conv(reg, cfg.name + ".d1b", 24, 32, 3, 1, rng);
  d1head_ = make_conv(reg, cfg.name + ".d1head", 32, 2 * cfg.q0_channels, 3, 1, rng);
  sigma1_raw_ = reg.add(cfg.name + ".sigma1",
                        Tensor::full({cfg.q1_channels}, kSigmaRawInit));
}

Var CoderBlock::run_e0(const Var& data4, const LevelEmbedding& lv, bool update_stats) {
  const Chw d = chw(data4->value);
  if (d.c != cfg_.data_channels) {
    throw std::invalid_argument(cfg_.name + ": E0 expects " +
                                std::to_string(cfg_.data_channels) + " channels, got " +
                                std::to_string(d.c));
  }
  Var xn = ops::channel_normalize(data4, norm_e0_, update_stats);
  return stack_.encode(attach_level_map(xn, level_var(lv)));
}

Var CoderBlock::run_e1(const Var& q0_rep, const LevelEmbedding& lv, bool update_stats) {
  Var xn = ops::channel_normalize(q0_rep, norm_e1_, update_stats);
  Var xl = attach_level_map(xn, level_var(lv));
  Var h = ops::leaky_relu(e1a_(xl));
  h = ops::leaky_relu(e1b_(h));
  return e1head_(h);
}

Var CoderBlock::run_d1(const Var& q1_rep, const LevelEmbedding& lv, int pixel_h,
                       int pixel_w) const {
  Var h = attach_level_map(q1_rep, level_var(lv));
  h = ops::upsample_nearest2(h, ceil_div(pixel_h, 32), ceil_div(pixel_w, 32));
  h = ops::leaky_relu(d1a_(h));
  h = ops::upsample_nearest2(h, ceil_div(pixel_h, 16), ceil_div(pixel_w, 16));
  h = ops::leaky_relu(d1b_(h));
  return d1head_(h);
}

std::pair<Var, Var> CoderBlock::d1_gaussian(const Var& d1_out) const {
  Var mu = ops::slice_channels(d1_out, 0, cfg_.q0_channels);
  Var sraw = ops::slice_channels(d1_out, cfg_.q0_channels, 2 * cfg_.q0_channels);
  Var sigma = ops::add_scalar(ops::softplus(sraw), kMinSigma);
  return {mu, sigma};
}

Var CoderBlock::run_d0(const Var& q0_rep, const std::vector<Var>& side,
                       const LevelEmbedding& lv, int pixel_h, int pixel_w) const {
  // Side inputs (state, base flow, ...) live at the 4x scale, so the stack
  // merges them at its final decoder block where the resolutions meet.
  return stack_.decode(attach_level_map(q0_rep, level_var(lv)), side, pixel_h,
                       pixel_w);
}

Var CoderBlock::q1_sigma(int b, int h, int w) const {
  Var sp = ops::add_scalar(ops::softplus(sigma1_raw_), kMinSigma);
  return ops::tile_vector2d(sp, b, h, w);
}

CoderBlock::TrainOut CoderBlock::train_code(const Var& data4,
                                            const std::vector<Var>& d0_side,
                                            const LevelEmbedding& lv, Rng& noise_rng,
                                            int pixel_h, int pixel_w,
                                            bool update_stats) {
  check_pixel_dims(pixel_h, pixel_w);
  Var y = run_e0(data4, lv, update_stats);
  Var w0 = qw0_.widths(lv);
  Var q0_rep = ops::ste_quantize(y, w0);
  Var z = run_e1(q0_rep, lv, update_stats);
  Var w1 = qw1_.widths(lv);
  Var q1_rep = ops::ste_quantize(z, w1);
  auto [mu0, sigma0] = d1_gaussian(run_d1(q1_rep, lv, pixel_h, pixel_w));

  // Rate path: additive-noise surrogates against the entropy model.
  Var y_noisy = ops::add_scaled_noise(y, w0, ops::uniform_noise_like(y->value, noise_rng));
  Var rate0 = codelength_bits_op(y_noisy, mu0, sigma0, w0);
  Var z_noisy = ops::add_scaled_noise(z, w1, ops::uniform_noise_like(z->value, noise_rng));
  const Chw zd = chw(z->value);
  Var mu1 = constant(Tensor::zeros(z->value.shape));
  Var sigma1 = q1_sigma(z->value.rank() == 4 ? zd.b : 0, zd.h, zd.w);
  Var rate1 = codelength_bits_op(z_noisy, mu1, sigma1, w1);

  TrainOut out;
  out.outputs = run_d0(q0_rep, d0_side, lv, pixel_h, pixel_w);
  out.rate_bits = rate0 + rate1;
  return out;
}

std::vector<int> CoderBlock::q0_shape(int pixel_h, int pixel_w) const {
  return {cfg_.q0_channels, ceil_div(pixel_h, 16), ceil_div(pixel_w, 16)};
}

std::vector<int> CoderBlock::q1_shape(int pixel_h, int pixel_w) const {
  return {cfg_.q1_channels, ceil_div(pixel_h, 64), ceil_div(pixel_w, 64)};
}

GaussianParams CoderBlock::q1_params(int h1, int w1) const {
  NoGradScope ng;
  Tensor sigma = q1_sigma(0, h1, w1)->value;
  return GaussianParams{Tensor::zeros({cfg_.q1_channels, h1, w1}), std::move(sigma)};
}

CoderBlock::EncodeOut CoderBlock::encode_eval(const Tensor& data4,
                                              const std::vector<Tensor>& d0_side,
                                              const LevelEmbedding& lv, int pixel_h,
                                              int pixel_w) {
  check_pixel_dims(pixel_h, pixel_w);
  if (data4.rank() != 3) {
    throw std::invalid_argument("encode_eval expects a rank-3 frame, got " +
                                data4.shape_str());
  }
  NoGradScope ng;
  EncodeOut out;

  Var y = run_e0(constant(data4), lv, false);
  out.q0 = quantize(y->value, as_vector(qw0_.widths(lv)->value));
  Var z = run_e1(constant(out.q0.values()), lv, false);
  out.q1 = quantize(z->value, as_vector(qw1_.widths(lv)->value));

  GaussianParams p1 = q1_params(out.q1.height(), out.q1.width());
  out.q1_bytes = range_encode(out.q1, p1);

  auto [mu0, sigma0] = d1_gaussian(run_d1(constant(out.q1.values()), lv, pixel_h, pixel_w));
  out.p0 = GaussianParams{mu0->value, sigma0->value};
  out.q0_bytes = range_encode(out.q0, out.p0);
  out.est_bits = codelength_bits(out.q0, out.p0) + codelength_bits(out.q1, p1);

  std::vector<Var> side;
  side.reserve(d0_side.size());
  for (const Tensor& t : d0_side) side.push_back(constant(t));
  out.outputs = run_d0(constant(out.q0.values()), side, lv, pixel_h, pixel_w)->value;
  return out;
}

Tensor CoderBlock::decode_eval(const std::vector<uint8_t>& q1_bytes,
                               const std::vector<uint8_t>& q0_bytes,
                               const std::vector<Tensor>& d0_side,
                               const LevelEmbedding& lv, int pixel_h,
                               int pixel_w) const {
  check_pixel_dims(pixel_h, pixel_w);
  NoGradScope ng;

  const std::vector<int> shape1 = q1_shape(pixel_h, pixel_w);
  GaussianParams p1 = q1_params(shape1[1], shape1[2]);
  Codelayer q1 = range_decode(q1_bytes, shape1, as_vector(qw1_.widths(lv)->value), p1);

  auto [mu0, sigma0] = d1_gaussian(run_d1(constant(q1.values()), lv, pixel_h, pixel_w));
  Codelayer q0 = range_decode(q0_bytes, q0_shape(pixel_h, pixel_w),
                              as_vector(qw0_.widths(lv)->value),
                              GaussianParams{mu0->value, sigma0->value});

  std::vector<Var> side;
  side.reserve(d0_side.size());
  for (const Tensor& t : d0_side) side.push_back(constant(t));
  return run_d0(constant(q0.values()), side, lv, pixel_h, pixel_w)->value;
}

// ------------------------------------------------------------ codec model ----

CodecModel::CodecModel(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.init_seed);
  const int s2d = 16;  // pixel channels fan out by 4*4 at 4x
  const int S = cfg.state_channels;

  CoderBlockConfig ic;
  ic.name = "iframe";
  ic.data_channels = 3 * s2d;
  ic.d0_extra_channels = 0;
  ic.out_channels = 3 * s2d + S;
  ic.enc_dm = cfg.enc_dm;
  ic.dec_dm = cfg.dec_dm_iframe;
  ic.dm_inner = cfg.dm_inner;
  ic.q0_channels = cfg.q0_channels;
  ic.q1_channels = cfg.q1_channels;
  ic.embed_dim = cfg.embed_dim;
  iframe_ = CoderBlock(ic, reg_, rng);

  CoderBlockConfig fc = ic;
  fc.name = "flow";
  fc.data_channels = 9 * s2d + S;       // frame, prev recon, base flow, state
  fc.d0_extra_channels = 3 * s2d + S;   // base flow (as depth), state
  fc.out_channels = 4 * s2d + S;        // mask, ddx, ddy, dsigma + state
  fc.dec_dm = cfg.dec_dm_flow;
  flow_ = CoderBlock(fc, reg_, rng);

  CoderBlockConfig rc = ic;
  rc.name = "residue";
  rc.data_channels = 3 * s2d + S;
  rc.d0_extra_channels = S;
  rc.out_channels = 3 * s2d + S;
  rc.dec_dm = cfg.dec_dm_residue;
  residue_ = CoderBlock(rc, reg_, rng);

  predictor_ = FlowPredictor(reg_, "predictor", cfg.embed_dim, rng);

  // Head bias shaping: the I-frame reconstruction starts at mid-gray, and the
  // flow block's raw sigma channels start deep in the sigmoid tail so the
  // initial warp is nearly sharp.
  Var ib = reg_.find("iframe.stack.dec.head.b");
  for (int i = 0; i < 3 * s2d; ++i) ib->value[i] = 0.5;
  Var fb = reg_.find("flow.stack.dec.head.b");
  for (int i = 3 * s2d; i < 4 * s2d; ++i) fb->value[i] = -4.0;
}

CodecModel::IFrameTrain CodecModel::train_iframe(const Var& x, const LevelEmbedding& lv,
                                                 Rng& noise_rng, bool update_stats) {
  const Chw d = chw(x->value);
  auto tc = iframe_.train_code(ops::space_to_depth(x, 4), {}, lv, noise_rng, d.h, d.w,
                               update_stats);
  IFrameTrain out;
  out.recon = ops::clamp01(ops::depth_to_space(ops::slice_channels(tc.outputs, 0, 48), 4));
  out.state = ops::slice_channels(tc.outputs, 48, 48 + cfg_.state_channels);
  out.rate_bits = tc.rate_bits;
  return out;
}

Var CodecModel::base_flow(const Var& prev_flow, const Var& prev_prev_recon,
                          const Var& prev_recon, const LevelEmbedding& lv) const {
  if (!cfg_.use_predictor) {
    return constant(Tensor::zeros(prev_flow->value.shape));
  }
  return predictor_(prev_flow, prev_prev_recon, prev_recon, level_var(lv));
}

CodecModel::FlowSplit CodecModel::split_flow_output(const Var& d0_out,
                                                    const Var& base) const {
  Var flow_pix = ops::depth_to_space(ops::slice_channels(d0_out, 0, 64), 4);
  Var mask = ops::sigmoid(ops::slice_channels(flow_pix, 0, 1));
  Var ddx = ops::slice_channels(flow_pix, 1, 2);
  Var ddy = ops::slice_channels(flow_pix, 2, 3);
  Var dsig = ops::mul_scalar(ops::sigmoid(ops::slice_channels(flow_pix, 3, 4)),
                             cfg_.scale_space.levels - 1.0);
  FlowSplit out;
  out.flow = combine_flow(base, mask, ops::concat_channels({ddx, ddy, dsig}));
  out.state = ops::slice_channels(d0_out, 64, 64 + cfg_.state_channels);
  return out;
}

CodecModel::ResidueSplit CodecModel::split_residue_output(const Var& d0_out) const {
  ResidueSplit out;
  out.residue = ops::depth_to_space(ops::slice_channels(d0_out, 0, 48), 4);
  out.state = ops::slice_channels(d0_out, 48, 48 + cfg_.state_channels);
  return out;
}

CodecModel::PFrameTrain CodecModel::train_pframe(const Var& x, const Var& prev_recon,
                                                 const Var& prev_prev_recon,
                                                 const Var& prev_flow, const Var& state,
                                                 const LevelEmbedding& lv, Rng& noise_rng,
                                                 bool update_stats) {
  const Chw d = chw(x->value);
  Var fbar = base_flow(prev_flow, prev_prev_recon, prev_recon, lv);

  Var e0 = ops::concat_channels(
      {ops::space_to_depth(ops::concat_channels({x, prev_recon, fbar}), 4), state});
  std::vector<Var> flow_side = {ops::space_to_depth(fbar, 4), state};
  auto fc = flow_.train_code(e0, flow_side, lv, noise_rng, d.h, d.w, update_stats);
  FlowSplit fs = split_flow_output(fc.outputs, fbar);

  Var comp = scale_space_warp(prev_recon, fs.flow, cfg_.scale_space);
  Var resid = x - comp;
  Var re0 = ops::concat_channels({ops::space_to_depth(resid, 4), fs.state});
  auto rc = residue_.train_code(re0, {fs.state}, lv, noise_rng, d.h, d.w, update_stats);
  ResidueSplit rs = split_residue_output(rc.outputs);

  PFrameTrain out;
  out.recon = ops::clamp01(comp + rs.residue);
  out.flow = fs.flow;
  out.state = rs.state;
  out.flow_bits = fc.rate_bits;
  out.residue_bits = rc.rate_bits;
  out.rate_bits = fc.rate_bits + rc.rate_bits;
  return out;
}

CodecModel::IFrameEncode CodecModel::encode_iframe(const Tensor& x, double level) {
  NoGradScope ng;
  const Chw d = chw(x);
  const LevelEmbedding lv = embedding(level);
  auto eo = iframe_.encode_eval(ops::space_to_depth(constant(x), 4)->value, {}, lv, d.h, d.w);

  Var outv = constant(eo.outputs);
  IFrameEncode out;
  out.recon =
      ops::clamp01(ops::depth_to_space(ops::slice_channels(outv, 0, 48), 4))->value;
  out.state = ops::slice_channels(outv, 48, 48 + cfg_.state_channels)->value;
  out.q1_bytes = eo.q1_bytes;
  out.q0_bytes = eo.q0_bytes;
  out.est_bits = eo.est_bits;
  out.raw = std::move(eo);
  return out;
}

CodecModel::IFrameDecode CodecModel::decode_iframe(const std::vector<uint8_t>& q1_bytes,
                                                   const std::vector<uint8_t>& q0_bytes,
                                                   double level, int pixel_h,
                                                   int pixel_w) {
  NoGradScope ng;
  const LevelEmbedding lv = embedding(level);
  Var outv =
      constant(iframe_.decode_eval(q1_bytes, q0_bytes, {}, lv, pixel_h, pixel_w));
  IFrameDecode out;
  out.recon =
      ops::clamp01(ops::depth_to_space(ops::slice_channels(outv, 0, 48), 4))->value;
  out.state = ops::slice_channels(outv, 48, 48 + cfg_.state_channels)->value;
  return out;
}

CodecModel::PFrameEncode CodecModel::encode_pframe(const Tensor& x,
                                                   const PFrameContext& ctx,
                                                   double level) {
  NoGradScope ng;
  const Chw d = chw(x);
  const LevelEmbedding lv = embedding(level);

  Var fbar = base_flow(constant(ctx.prev_flow), constant(ctx.prev_prev_recon),
                       constant(ctx.prev_recon), lv);
  Var e0 = ops::concat_channels(
      {ops::space_to_depth(
           ops::concat_channels({constant(x), constant(ctx.prev_recon), fbar}), 4),
       constant(ctx.state)});
  const Tensor fbar4 = ops::space_to_depth(fbar, 4)->value;
  auto fo = flow_.encode_eval(e0->value, {fbar4, ctx.state}, lv, d.h, d.w);
  FlowSplit fs = split_flow_output(constant(fo.outputs), fbar);

  Var comp = scale_space_warp(constant(ctx.prev_recon), fs.flow, cfg_.scale_space);
  Var resid = constant(x) - comp;
  Var re0 = ops::concat_channels({ops::space_to_depth(resid, 4), fs.state});
  auto ro = residue_.encode_eval(re0->value, {fs.state->value}, lv, d.h, d.w);
  ResidueSplit rs = split_residue_output(constant(ro.outputs));

  PFrameEncode out;
  out.recon = ops::clamp01(comp + rs.residue)->value;
  out.flow = fs.flow->value;
  out.state = rs.state->value;
  out.flow_q1 = fo.q1_bytes;
  out.flow_q0 = fo.q0_bytes;
  out.res_q1 = ro.q1_bytes;
  out.res_q0 = ro.q0_bytes;
  out.flow_est_bits = fo.est_bits;
  out.res_est_bits = ro.est_bits;
  out.flow_raw = std::move(fo);
  out.res_raw = std::move(ro);
  return out;
}

CodecModel::PFrameDecode CodecModel::decode_pframe(
    const std::vector<uint8_t>& flow_q1, const std::vector<uint8_t>& flow_q0,
    const std::vector<uint8_t>& res_q1, const std::vector<uint8_t>& res_q0,
    const PFrameContext& ctx, double level) {
  NoGradScope ng;
  const Chw d = chw(ctx.prev_recon);
  const LevelEmbedding lv = embedding(level);

  Var fbar = base_flow(constant(ctx.prev_flow), constant(ctx.prev_prev_recon),
                       constant(ctx.prev_recon), lv);
  const Tensor fbar4 = ops::space_to_depth(fbar, 4)->value;
  Tensor fout = flow_.decode_eval(flow_q1, flow_q0, {fbar4, ctx.state}, lv, d.h, d.w);
  FlowSplit fs = split_flow_output(constant(fout), fbar);

  Var comp = scale_space_warp(constant(ctx.prev_recon), fs.flow, cfg_.scale_space);
  Tensor rout = residue_.decode_eval(res_q1, res_q0, {fs.state->value}, lv, d.h, d.w);
  ResidueSplit rs = split_residue_output(constant(rout));

  PFrameDecode out;
  out.recon = ops::clamp01(comp + rs.residue)->value;
  out.flow = fs.flow->value;
  out.state = rs.state->value;
  return out;
}

std::vector<CodecModel::StatsEntry> CodecModel::stats_entries() {
  return {
      {"iframe.norm_e0", &iframe_.e0_stats()},
      {"iframe.norm_e1", &iframe_.e1_stats()},
      {"flow.norm_e0", &flow_.e0_stats()},
      {"flow.norm_e1", &flow_.e1_stats()},
      {"residue.norm_e0", &residue_.e0_stats()},
      {"residue.norm_e1", &residue_.e1_stats()},
  };
}

// --------------------------------------------------------------- padding ----

Tensor pad_to_multiple(const Tensor& t, int multiple) {
  if (multiple <= 0) throw std::invalid_argument("pad multiple must be positive");
  const Chw d = chw(t);
  const int h2 = ceil_div(d.h, multiple) * multiple;
  const int w2 = ceil_div(d.w, multiple) * multiple;
  if (h2 == d.h && w2 == d.w) return t;
  Tensor out = Tensor::zeros(like_shape(t, d.c, h2, w2));
  for (int b = 0; b < d.b; ++b) {
    for (int c = 0; c < d.c; ++c) {
      const int64_t src0 = (static_cast<int64_t>(b) * d.c + c) * d.plane();
      const int64_t dst0 = (static_cast<int64_t>(b) * d.c + c) * h2 * w2;
      for (int y = 0; y < h2; ++y) {
        const int sy = y < d.h ? y : d.h - 1;
        for (int x = 0; x < w2; ++x) {
          const int sx = x < d.w ? x : d.w - 1;
          out[dst0 + static_cast<int64_t>(y) * w2 + x] =
              t[src0 + static_cast<int64_t>(sy) * d.w + sx];
        }
      }
    }
  }
  return out;
}

Tensor crop_to(const Tensor& t, int h, int w) {
  const Chw d = chw(t);
  if (h > d.h || w > d.w || h <= 0 || w <= 0) {
    throw std::invalid_argument("crop_to: target " + std::to_string(h) + "x" +
                                std::to_string(w) + " exceeds source " + t.shape_str());
  }
  if (h == d.h && w == d.w) return t;
  Tensor out = Tensor::zeros(like_shape(t, d.c, h, w));
  for (int b = 0; b < d.b; ++b) {
    for (int c = 0; c < d.c; ++c) {
      const int64_t src0 = (static_cast<int64_t>(b) * d.c + c) * d.plane();
      const int64_t dst0 = (static_cast<int64_t>(b) * d.c + c) * static_cast<int64_t>(h) * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          out[dst0 + static_cast<int64_t>(y) * w + x] =
              t[src0 + static_cast<int64_t>(y) * d.w + x];
        }
      }
    }
  }
  return out;
}

}  // namespace elfvc
