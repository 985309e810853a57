#pragma once

// Whole-video coding: GOP structure, per-frame rate control, and the
// bitstream container.
//
// Stream layout (all integers little-endian):
//   magic "ELFV", u8 version, u16 width, u16 height, u8 levels, u8 embed_dim,
//   u8 gop, u32 frame count, u64 model hash;
//   then per frame: u8 type (0 = I, 1 = P), u16 level (8.8 fixed point),
//   per codelayer section a u32 byte length + payload — q1 sections first,
//   then q0 sections, each ordered flow block before residue block for P
//   frames — and finally u32 CRC32 over the frame record bytes.

#include <cstdint>
#include <vector>

#include "elfvc/dataio.hpp"
#include "elfvc/model.hpp"
#include "elfvc/rateflex.hpp"
#include "elfvc/tensor.hpp"

namespace elfvc {

inline constexpr uint8_t kStreamVersion = 1;
inline constexpr uint8_t kFrameTypeI = 0;
inline constexpr uint8_t kFrameTypeP = 1;

struct StreamHeader {
  int width = 0, height = 0;      // true pixel dims (before internal padding)
  int levels = 0, embed_dim = 0;  // rate-level space of the producing model
  int gop = 0;
  uint32_t frames = 0;
  uint64_t model_hash = 0;
};

std::vector<uint8_t> serialize_header(const StreamHeader& h);
StreamHeader parse_header(ByteReader& r);  // throws std::runtime_error

struct FrameStats {
  int index = 0;
  bool iframe = false;
  double level = 0.0;       // snapped level actually coded
  int64_t bytes = 0;        // full frame record incl. framing and CRC
  double bpp = 0.0;         // bytes * 8 / (true W*H)
  double psnr_db = 0.0;     // reconstruction vs. source
  double est_bits = 0.0;    // codelength estimate (payload only)
  double flow_bits = 0.0;   // actual payload bits, flow block (P only)
  double residue_bits = 0.0;
  bool rc_violated = false; // rate controller could not satisfy its constraint
};

struct EncodeOptions {
  int gop = 8;
  RateControlConfig rc;  // constant-level by default
};

struct EncodeResult {
  std::vector<uint8_t> stream;
  std::vector<FrameStats> frames;
  std::vector<Tensor> recons;  // encoder-side reconstructions, true dims
  bool violated = false;       // any frame flagged by the rate controller
};

// Frames are (3,H,W) in [0,1], all the same shape.  Throws
// std::invalid_argument on malformed input.
EncodeResult encode_video(CodecModel& model, const std::vector<Tensor>& frames,
                          const EncodeOptions& opts);

struct DecodeResult {
  StreamHeader header;
  std::vector<Tensor> frames;   // reconstructions, true dims
  std::vector<double> levels;   // per-frame coded level
  std::vector<uint8_t> types;   // kFrameTypeI / kFrameTypeP
};

// Throws std::runtime_error on corruption (bad magic/version, CRC mismatch,
// model-hash mismatch, truncation, trailing bytes, misplaced frame types).
DecodeResult decode_video(CodecModel& model, const std::vector<uint8_t>& stream);

// Where one frame's bits land spatially.  The map covers the coded canvas
// (pixel dims padded up to multiples of 4) and sums every codelayer section
// of the frame, so alloc.total_bits equals the frame's codelength estimate.
// Needs only the frame's own record: codelayer priors depend on the coded
// level and the hyper layer, never on the GOP context.
struct FrameBitMap {
  uint8_t type = 0;    // kFrameTypeI / kFrameTypeP
  double level = 0.0;  // snapped level the frame was coded at
  int width = 0, height = 0;  // true pixel dims (map dims may be padded)
  BitAllocationMap alloc;
};
FrameBitMap frame_bit_map(CodecModel& model, const std::vector<uint8_t>& stream,
                          int frame_index);

}  // namespace elfvc
