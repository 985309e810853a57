#include "elfvc/rangecoder.hpp"

#include <stdexcept>

namespace elfvc {

namespace {
// Renormalization thresholds: emit while the top byte is settled, force the
// range open once it drops below 2^32 so freq scaling never underflows.
constexpr uint64_t kTop = 1ull << 56;
constexpr uint64_t kBot = 1ull << 32;
}  // namespace

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  if (freq == 0 || cum + freq > kFreqTotal)
    throw std::invalid_argument("range encoder: invalid frequency interval");
  uint64_t r = range_ >> kFreqBits;
  low_ += r * cum;
  range_ = r * freq;
  normalize();
}

void RangeEncoder::normalize() {
  for (;;) {
    if ((low_ ^ (low_ + range_)) >= kTop) {
      // Top byte still straddles a carry boundary.
      if (range_ >= kBot) break;
      // Clamp the range so the boundary can never be crossed (carry-less).
      range_ = (0 - low_) & (kBot - 1);
    }
    out_.push_back(static_cast<uint8_t>(low_ >> 56));
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  // Smallest multiple of 2^32 inside [low, low+range): its top four bytes
  // identify the interval and the implied zero tail matches decoder padding.
  uint64_t v = (low_ + kBot - 1) & ~(kBot - 1);
  for (int s = 56; s >= 32; s -= 8) out_.push_back(static_cast<uint8_t>(v >> s));
  low_ = 0;
  range_ = ~0ull;
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const std::vector<uint8_t>& bytes) : bytes_(bytes) {
  for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next_byte();
}

uint32_t RangeDecoder::decode_target() {
  uint64_t r = range_ >> kFreqBits;
  uint64_t t = (code_ - low_) / r;
  // Corrupt input may land in the truncated slack past the last interval;
  // clamp so symbol lookup stays in range (checksums catch the damage later).
  return t < kFreqTotal ? static_cast<uint32_t>(t) : kFreqTotal - 1;
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
  if (freq == 0 || cum + freq > kFreqTotal)
    throw std::invalid_argument("range decoder: invalid frequency interval");
  uint64_t r = range_ >> kFreqBits;
  low_ += r * cum;
  range_ = r * freq;
  normalize();
}

void RangeDecoder::normalize() {
  for (;;) {
    if ((low_ ^ (low_ + range_)) >= kTop) {
      if (range_ >= kBot) break;
      range_ = (0 - low_) & (kBot - 1);
    }
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

}  // namespace elfvc
