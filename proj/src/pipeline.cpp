#include "elfvc/pipeline.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "elfvc/metrics.hpp"

namespace elfvc {

namespace {

constexpr char kMagic[4] = {'E', 'L', 'F', 'V'};

void append_section(ByteWriter& w, const std::vector<uint8_t>& payload) {
  w.u32(static_cast<uint32_t>(payload.size()));
  w.raw(payload);
}

}  // namespace

std::vector<uint8_t> serialize_header(const StreamHeader& h) {
  ByteWriter w;
  w.raw(reinterpret_cast<const uint8_t*>(kMagic), 4);
  w.u8(kStreamVersion);
  w.u16(static_cast<uint16_t>(h.width));
  w.u16(static_cast<uint16_t>(h.height));
  w.u8(static_cast<uint8_t>(h.levels));
  w.u8(static_cast<uint8_t>(h.embed_dim));
  w.u8(static_cast<uint8_t>(h.gop));
  w.u32(h.frames);
  w.u64(h.model_hash);
  return w.bytes;
}

StreamHeader parse_header(ByteReader& r) {
  const std::string magic = r.text(4);
  if (magic != std::string(kMagic, 4)) {
    throw std::runtime_error("not a video stream (bad magic)");
  }
  const uint8_t version = r.u8();
  if (version != kStreamVersion) {
    throw std::runtime_error("unsupported stream version " + std::to_string(version));
  }
  StreamHeader h;
  h.width = r.u16();
  h.height = r.u16();
  h.levels = r.u8();
  h.embed_dim = r.u8();
  h.gop = r.u8();
  h.frames = r.u32();
  h.model_hash = r.u64();
  if (h.width == 0 || h.height == 0 || h.levels == 0 || h.embed_dim == 0 || h.gop == 0) {
    throw std::runtime_error("corrupt stream header (zero field)");
  }
  return h;
}

// ----------------------------------------------------------------- encode ----

EncodeResult encode_video(CodecModel& model, const std::vector<Tensor>& frames,
                          const EncodeOptions& opts) {
  if (frames.empty()) throw std::invalid_argument("encode_video: no frames");
  const Chw d0 = chw(frames[0]);
  if (frames[0].rank() != 3 || d0.c != 3) {
    throw std::invalid_argument("encode_video: frames must be (3,H,W), got " +
                                frames[0].shape_str());
  }
  if (d0.w > 0xFFFF || d0.h > 0xFFFF) {
    throw std::invalid_argument("encode_video: frame dims exceed the u16 header");
  }
  for (const Tensor& f : frames) {
    if (f.shape != frames[0].shape) {
      throw std::invalid_argument("encode_video: frame shape mismatch " + f.shape_str() +
                                  " vs " + frames[0].shape_str());
    }
    if (!f.all_finite()) throw std::invalid_argument("encode_video: non-finite pixels");
  }
  if (opts.gop < 1 || opts.gop > 255) {
    throw std::invalid_argument("encode_video: gop must be in [1, 255]");
  }

  const int W = d0.w, H = d0.h;
  const double pixels = static_cast<double>(W) * H;

  StreamHeader header;
  header.width = W;
  header.height = H;
  header.levels = model.config().levels;
  header.embed_dim = model.config().embed_dim;
  header.gop = opts.gop;
  header.frames = static_cast<uint32_t>(frames.size());
  header.model_hash = model_hash(model);

  std::vector<Tensor> padded;
  padded.reserve(frames.size());
  for (const Tensor& f : frames) padded.push_back(pad_to_multiple(f, 4));
  const Chw dp = chw(padded[0]);

  RateControlConfig rc = opts.rc;
  rc.levels = model.config().levels;

  EncodeResult result;
  ByteWriter stream;
  stream.raw(serialize_header(header));

  PFrameContext ctx;
  for (size_t t = 0; t < frames.size(); ++t) {
    const bool is_iframe = t % static_cast<size_t>(opts.gop) == 0;

    // One full encode of frame t at a snapped candidate level, memoized so
    // the committed frame is byte-identical to the winning probe.
    struct Candidate {
      std::vector<uint8_t> record;
      Tensor recon_padded, flow, state;
      double est_bits = 0.0, flow_bits = 0.0, residue_bits = 0.0;
      double bpp = 0.0, psnr = 0.0;
    };
    std::map<uint16_t, Candidate> cache;
    auto encode_candidate = [&](double level) -> const Candidate& {
      const uint16_t fx = level_to_fixed(level);
      auto it = cache.find(fx);
      if (it != cache.end()) return it->second;
      const double lvl = fixed_to_level(fx);

      Candidate c;
      ByteWriter rec;
      if (is_iframe) {
        auto io = model.encode_iframe(padded[t], lvl);
        rec.u8(kFrameTypeI);
        rec.u16(fx);
        append_section(rec, io.q1_bytes);
        append_section(rec, io.q0_bytes);
        c.recon_padded = io.recon;
        c.flow = Tensor::zeros({3, dp.h, dp.w});
        c.state = io.state;
        c.est_bits = io.est_bits;
      } else {
        auto po = model.encode_pframe(padded[t], ctx, lvl);
        rec.u8(kFrameTypeP);
        rec.u16(fx);
        append_section(rec, po.flow_q1);
        append_section(rec, po.res_q1);
        append_section(rec, po.flow_q0);
        append_section(rec, po.res_q0);
        c.recon_padded = po.recon;
        c.flow = po.flow;
        c.state = po.state;
        c.est_bits = po.flow_est_bits + po.res_est_bits;
        c.flow_bits = 8.0 * static_cast<double>(po.flow_q1.size() + po.flow_q0.size());
        c.residue_bits = 8.0 * static_cast<double>(po.res_q1.size() + po.res_q0.size());
      }
      rec.u32(crc32(rec.bytes));
      c.bpp = 8.0 * static_cast<double>(rec.bytes.size()) / pixels;
      c.psnr = psnr_db(crop_to(c.recon_padded, H, W), frames[t]);
      c.record = std::move(rec.bytes);
      return cache.emplace(fx, std::move(c)).first->second;
    };

    const RateDecision decision = rate_control_frame(rc, is_iframe, [&](double lvl) {
      const Candidate& c = encode_candidate(lvl);
      return ProbeResult{c.bpp, c.psnr};
    });
    const Candidate& winner = encode_candidate(fixed_to_level(decision.level_fx));

    stream.raw(winner.record);

    FrameStats fs;
    fs.index = static_cast<int>(t);
    fs.iframe = is_iframe;
    fs.level = fixed_to_level(decision.level_fx);
    fs.bytes = static_cast<int64_t>(winner.record.size());
    fs.bpp = winner.bpp;
    fs.psnr_db = winner.psnr;
    fs.est_bits = winner.est_bits;
    fs.flow_bits = winner.flow_bits;
    fs.residue_bits = winner.residue_bits;
    fs.rc_violated = decision.violated;
    result.frames.push_back(fs);
    result.violated = result.violated || decision.violated;
    result.recons.push_back(crop_to(winner.recon_padded, H, W));

    if (is_iframe) {
      ctx.prev_recon = winner.recon_padded;
      ctx.prev_prev_recon = winner.recon_padded;
      ctx.prev_flow = Tensor::zeros({3, dp.h, dp.w});
      ctx.state = winner.state;
    } else {
      ctx.prev_prev_recon = ctx.prev_recon;
      ctx.prev_recon = winner.recon_padded;
      ctx.prev_flow = winner.flow;
      ctx.state = winner.state;
    }
  }

  result.stream = std::move(stream.bytes);
  return result;
}

// ----------------------------------------------------------------- decode ----

namespace {

void check_model_match(const StreamHeader& h, CodecModel& model) {
  if (h.levels != model.config().levels || h.embed_dim != model.config().embed_dim) {
    throw std::runtime_error("stream level space (" + std::to_string(h.levels) + "," +
                             std::to_string(h.embed_dim) + ") does not match the model");
  }
  if (h.model_hash != model_hash(model)) {
    throw std::runtime_error("model hash mismatch: stream was produced by different weights");
  }
}

struct FrameRecord {
  uint8_t type = 0;
  double level = 0.0;
  std::vector<std::vector<uint8_t>> payload;  // I: q1,q0   P: fq1,rq1,fq0,rq0
};

// Parses and CRC-checks one frame record, enforcing GOP structure and the
// model's level range.
FrameRecord read_frame_record(ByteReader& r, const std::vector<uint8_t>& stream,
                              uint32_t t, uint8_t gop, int model_levels) {
  const size_t record_start = r.pos;
  FrameRecord rec;
  rec.type = r.u8();
  if (rec.type != kFrameTypeI && rec.type != kFrameTypeP) {
    throw std::runtime_error("frame " + std::to_string(t) + ": unknown type " +
                             std::to_string(rec.type));
  }
  const bool expect_iframe = t % static_cast<uint32_t>(gop) == 0;
  if ((rec.type == kFrameTypeI) != expect_iframe) {
    throw std::runtime_error("frame " + std::to_string(t) +
                             ": frame type inconsistent with GOP structure");
  }
  const uint16_t level_fx = r.u16();
  rec.level = fixed_to_level(level_fx);
  if (rec.level > model_levels - 1) {
    throw std::runtime_error("frame " + std::to_string(t) + ": level " +
                             std::to_string(rec.level) + " outside the model range");
  }

  const int sections = rec.type == kFrameTypeI ? 2 : 4;
  rec.payload.reserve(sections);
  for (int s = 0; s < sections; ++s) {
    const uint32_t len = r.u32();
    rec.payload.push_back(r.raw(len));
  }
  const size_t record_end = r.pos;
  const uint32_t want_crc = r.u32();
  const uint32_t got_crc = crc32(stream.data() + record_start, record_end - record_start);
  if (want_crc != got_crc) {
    throw std::runtime_error("frame " + std::to_string(t) + ": CRC mismatch (corrupt record)");
  }
  return rec;
}

}  // namespace

DecodeResult decode_video(CodecModel& model, const std::vector<uint8_t>& stream) {
  ByteReader r(stream);
  DecodeResult result;
  result.header = parse_header(r);
  const StreamHeader& h = result.header;
  check_model_match(h, model);

  const int W = h.width, H = h.height;
  const int Wp = ceil_div(W, 4) * 4, Hp = ceil_div(H, 4) * 4;

  PFrameContext ctx;
  for (uint32_t t = 0; t < h.frames; ++t) {
    const FrameRecord rec =
        read_frame_record(r, stream, t, static_cast<uint8_t>(h.gop), model.config().levels);
    if (rec.type == kFrameTypeI) {
      auto io = model.decode_iframe(rec.payload[0], rec.payload[1], rec.level, Hp, Wp);
      ctx.prev_recon = io.recon;
      ctx.prev_prev_recon = io.recon;
      ctx.prev_flow = Tensor::zeros({3, Hp, Wp});
      ctx.state = io.state;
      result.frames.push_back(crop_to(io.recon, H, W));
    } else {
      auto po = model.decode_pframe(rec.payload[0], rec.payload[2], rec.payload[1],
                                    rec.payload[3], ctx, rec.level);
      ctx.prev_prev_recon = ctx.prev_recon;
      ctx.prev_recon = po.recon;
      ctx.prev_flow = po.flow;
      ctx.state = po.state;
      result.frames.push_back(crop_to(po.recon, H, W));
    }
    result.levels.push_back(rec.level);
    result.types.push_back(rec.type);
  }
  if (r.remaining() != 0) {
    throw std::runtime_error("trailing bytes after the last frame record");
  }
  return result;
}

// ---------------------------------------------------------------- bit maps ----

FrameBitMap frame_bit_map(CodecModel& model, const std::vector<uint8_t>& stream,
                          int frame_index) {
  ByteReader r(stream);
  const StreamHeader h = parse_header(r);
  check_model_match(h, model);
  if (frame_index < 0 || static_cast<uint32_t>(frame_index) >= h.frames) {
    throw std::runtime_error("frame " + std::to_string(frame_index) +
                             " out of range (stream has " + std::to_string(h.frames) +
                             " frames)");
  }

  const int W = h.width, H = h.height;
  const int Wp = ceil_div(W, 4) * 4, Hp = ceil_div(H, 4) * 4;

  FrameRecord rec;
  for (uint32_t t = 0; t <= static_cast<uint32_t>(frame_index); ++t) {
    rec = read_frame_record(r, stream, t, static_cast<uint8_t>(h.gop),
                            model.config().levels);
  }

  const auto as_vec = [](const Tensor& t) {
    return std::vector<double>(t.data.begin(), t.data.end());
  };

  FrameBitMap out;
  out.type = rec.type;
  out.level = rec.level;
  out.width = W;
  out.height = H;
  out.alloc.map = Tensor::zeros({Hp, Wp});
  out.alloc.total_bits = 0.0;

  // Recover one block's codelayers exactly as its decoder would, then spread
  // the per-cell codelengths over the coded canvas.
  const auto add_block = [&](CoderBlock& blk, const std::vector<uint8_t>& q1_bytes,
                             const std::vector<uint8_t>& q0_bytes) {
    NoGradScope ng;
    const LevelEmbedding lv = model.embedding(rec.level);
    const std::vector<int> s1 = blk.q1_shape(Hp, Wp);
    const GaussianParams p1 = blk.q1_params(s1[1], s1[2]);
    const Codelayer q1 = range_decode(q1_bytes, s1, as_vec(blk.q1_widths(lv)->value), p1);
    auto [mu0, sigma0] = blk.d1_gaussian(blk.run_d1(constant(q1.values()), lv, Hp, Wp));
    const GaussianParams p0{mu0->value, sigma0->value};
    const Codelayer q0 = range_decode(q0_bytes, blk.q0_shape(Hp, Wp),
                                      as_vec(blk.q0_widths(lv)->value), p0);
    const BitAllocationMap m = spatial_bit_map(q0, p0, q1, p1, Hp, Wp);
    for (size_t i = 0; i < out.alloc.map.data.size(); ++i) {
      out.alloc.map.data[i] += m.map.data[i];
    }
    out.alloc.total_bits += m.total_bits;
  };

  if (rec.type == kFrameTypeI) {
    add_block(model.iframe_block(), rec.payload[0], rec.payload[1]);
  } else {
    add_block(model.flow_block(), rec.payload[0], rec.payload[2]);
    add_block(model.residue_block(), rec.payload[1], rec.payload[3]);
  }
  return out;
}

}  // namespace elfvc
