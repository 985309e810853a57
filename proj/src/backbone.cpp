#include "elfvc/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace elfvc {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

Conv2dLayer make_conv(ParamRegistry& reg, const std::string& name, int in_ch,
                      int out_ch, int ksize, int stride, Rng& rng, double gain) {
  check(in_ch > 0 && out_ch > 0, "make_conv: channel counts must be positive");
  check(ksize >= 1 && ksize % 2 == 1, "make_conv: kernel size must be odd");
  Tensor w = Tensor::zeros({out_ch, in_ch, ksize, ksize});
  if (gain != 0.0) {
    double stddev = gain * std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
    for (double& v : w.data) v = stddev * rng.normal();
  }
  Conv2dLayer layer;
  layer.w = reg.add(name + ".w", std::move(w));
  layer.b = reg.add(name + ".b", Tensor::zeros({out_ch}));
  layer.stride = stride;
  return layer;
}

// ------------------------------------------------------------- DM block ----

void DMBlockConfig::validate() const {
  check(channels > 0, "DMBlockConfig: channels must be positive");
  check(inner >= 1, "DMBlockConfig: need at least one inner conv");
  check(power_of_two(scale) && scale >= 4,
        "DMBlockConfig: scale must be a power of 2 and at least 4, got " +
            std::to_string(scale));
}

DMBlock::DMBlock(const DMBlockConfig& cfg, int in_channels, ParamRegistry& reg,
                 const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  proj_ = make_conv(reg, prefix + ".proj", in_channels, cfg.channels, 3, 1, rng);
  inner_.reserve(static_cast<size_t>(cfg.inner));
  for (int i = 0; i < cfg.inner; ++i)
    inner_.push_back(make_conv(reg, prefix + ".inner" + std::to_string(i),
                               cfg.channels, cfg.channels, 3, 1, rng));
  reduce_ = make_conv(reg, prefix + ".reduce", cfg.inner * cfg.channels,
                      cfg.channels, 1, 1, rng);
}

Var DMBlock::operator()(const Var& x, int at_scale) const {
  check(at_scale == cfg_.scale, "DMBlock: input at scale " +
                                    std::to_string(at_scale) + ", block built for " +
                                    std::to_string(cfg_.scale));
  Var a = proj_(x);
  std::vector<Var> merged;
  merged.reserve(inner_.size());
  for (const Conv2dLayer& conv : inner_) {
    a = a + conv(ops::leaky_relu(a));
    merged.push_back(a);
  }
  return reduce_(ops::concat_channels(merged));
}

int64_t DMBlock::param_count() const {
  int64_t n = proj_.param_count() + reduce_.param_count();
  for (const Conv2dLayer& conv : inner_) n += conv.param_count();
  return n;
}

// ------------------------------------------------------------ level map ----

Var attach_level_map(const Var& input, const Var& level_vec) {
  const Tensor& t = input->value;
  check(t.rank() == 3 || t.rank() == 4,
        "attach_level_map: input must be rank 3 or 4, got " + t.shape_str());
  check(level_vec->value.rank() == 1, "attach_level_map: level must be rank 1");
  int b = t.rank() == 4 ? t.shape[0] : 0;
  int h = t.shape[t.rank() - 2], w = t.shape[t.rank() - 1];
  Var slab = ops::tile_vector2d(level_vec, b, h, w);
  return ops::concat_channels({input, slab});
}

// ----------------------------------------------------------- coder stack ----

void CoderStackConfig::validate() const {
  check(!encoder.empty(), "CoderStackConfig: encoder has no blocks");
  check(encoder.size() == decoder.size(),
        "CoderStackConfig: encoder/decoder depth mismatch");
  check(in_channels > 0 && out_channels > 0 && q0_channels > 0 && dec_in_channels > 0,
        "CoderStackConfig: channel counts must be positive");
  check(side_channels >= 0, "CoderStackConfig: side_channels must be >= 0");
  for (const DMBlockConfig& b : encoder) b.validate();
  for (const DMBlockConfig& b : decoder) b.validate();
  for (size_t i = 0; i + 1 < encoder.size(); ++i)
    check(encoder[i + 1].scale == 2 * encoder[i].scale,
          "CoderStackConfig: encoder scales must double at each step");
  for (size_t i = 0; i < decoder.size(); ++i)
    check(decoder[i].scale == encoder[encoder.size() - 1 - i].scale,
          "CoderStackConfig: decoder scales must mirror the encoder");
  for (size_t i = 0; i < decoder.size(); ++i)
    check(decoder[i].channels <= encoder[i].channels,
          "CoderStackConfig: decoder wider than encoder breaks the asymmetry");
}

CoderStack::CoderStack(const CoderStackConfig& cfg, ParamRegistry& reg,
                       const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int depth = static_cast<int>(cfg.encoder.size());
  int ch = cfg.in_channels;
  for (int i = 0; i < depth; ++i) {
    enc_blocks_.emplace_back(cfg.encoder[i], ch,
                             reg, prefix + ".enc.dm" + std::to_string(i), rng);
    ch = cfg.encoder[i].channels;
    if (i + 1 < depth) {
      enc_down_.push_back(make_conv(reg, prefix + ".enc.down" + std::to_string(i),
                                    ch, cfg.encoder[i + 1].channels, 3, 2, rng));
      ch = cfg.encoder[i + 1].channels;
    }
  }
  enc_head_ = make_conv(reg, prefix + ".enc.head", ch, cfg.q0_channels, 3, 1, rng);

  ch = cfg.dec_in_channels;
  for (int i = 0; i < depth; ++i) {
    // Side channels (state and friends, 4x scale) enter at the last block.
    const int extra = (i + 1 == depth) ? cfg.side_channels : 0;
    dec_blocks_.emplace_back(cfg.decoder[i], ch + extra,
                             reg, prefix + ".dec.dm" + std::to_string(i), rng);
    ch = cfg.decoder[i].channels;
    if (i + 1 < depth) {
      dec_up_.push_back(make_conv(reg, prefix + ".dec.up" + std::to_string(i),
                                  ch, cfg.decoder[i + 1].channels, 3, 1, rng));
      ch = cfg.decoder[i + 1].channels;
    }
  }
  dec_head_ = make_conv(reg, prefix + ".dec.head", ch, cfg.out_channels, 3, 1, rng);
}

Var CoderStack::encode(const Var& x) const {
  Var a = x;
  int scale = cfg_.encoder.front().scale;
  for (size_t i = 0; i < enc_blocks_.size(); ++i) {
    a = enc_blocks_[i](a, scale);
    if (i < enc_down_.size()) {
      a = ops::leaky_relu(enc_down_[i](a));
      scale *= 2;
    }
  }
  return enc_head_(a);
}

Var CoderStack::decode(const Var& q0, const std::vector<Var>& side, int pixel_h,
                       int pixel_w) const {
  int side_ch = 0;
  for (const Var& s : side) side_ch += chw(s->value).c;
  if (side_ch != cfg_.side_channels) {
    throw std::invalid_argument(
        "CoderStack::decode: side inputs carry " + std::to_string(side_ch) +
        " channels, configured for " + std::to_string(cfg_.side_channels));
  }
  Var a = q0;
  int scale = cfg_.decoder.front().scale;
  for (size_t i = 0; i < dec_blocks_.size(); ++i) {
    if (i + 1 == dec_blocks_.size() && !side.empty()) {
      std::vector<Var> xs{a};
      xs.insert(xs.end(), side.begin(), side.end());
      a = ops::concat_channels(xs);
    }
    a = dec_blocks_[i](a, scale);
    if (i < dec_up_.size()) {
      scale /= 2;
      Var up = ops::upsample_nearest2(a, ceil_div(pixel_h, scale), ceil_div(pixel_w, scale));
      a = ops::leaky_relu(dec_up_[i](up));
    }
  }
  return dec_head_(a);
}

int64_t CoderStack::encoder_param_count() const {
  int64_t n = enc_head_.param_count();
  for (const DMBlock& b : enc_blocks_) n += b.param_count();
  for (const Conv2dLayer& c : enc_down_) n += c.param_count();
  return n;
}

int64_t CoderStack::decoder_param_count() const {
  int64_t n = dec_head_.param_count();
  for (const DMBlock& b : dec_blocks_) n += b.param_count();
  for (const Conv2dLayer& c : dec_up_) n += c.param_count();
  return n;
}

}  // namespace elfvc
