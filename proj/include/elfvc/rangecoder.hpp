#pragma once

// Carry-less byte-oriented range coder (Subbotin style).
//
// State is a 64-bit low / 64-bit range pair renormalized one byte at a time.
// Symbols are coded against integer frequency tables with a fixed total of
// 2^16, so the smallest codable probability is 2^-16.  Carry propagation is
// avoided by shrinking the range whenever the top byte of `low` is not yet
// settled, which costs a fraction of a bit at worst.  Flushing emits exactly
// four bytes; a decoder primed with eight bytes (zero-padded past the end)
// reproduces the encoder's interval walk bit for bit.

#include <cstdint>
#include <vector>

namespace elfvc {

// Frequencies are 16-bit: cum + freq <= kFreqTotal, freq >= 1.
inline constexpr uint32_t kFreqBits = 16;
inline constexpr uint32_t kFreqTotal = 1u << kFreqBits;

class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq);
  // Terminates the stream (4 bytes) and returns the buffer.
  std::vector<uint8_t> finish();
  size_t bytes_pending() const { return out_.size(); }

 private:
  void normalize();
  uint64_t low_ = 0;
  uint64_t range_ = ~0ull;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const std::vector<uint8_t>& bytes);

  // Cumulative frequency of the next symbol; caller locates the symbol whose
  // [cum, cum+freq) interval contains it, then calls consume with that pair.
  uint32_t decode_target();
  void consume(uint32_t cum, uint32_t freq);

 private:
  void normalize();
  uint8_t next_byte() { return pos_ < bytes_.size() ? bytes_[pos_++] : 0; }
  std::vector<uint8_t> bytes_;
  size_t pos_ = 0;
  uint64_t low_ = 0;
  uint64_t range_ = ~0ull;
  uint64_t code_ = 0;
};

}  // namespace elfvc
