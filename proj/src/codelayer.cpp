#include "elfvc/codelayer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "elfvc/mathfn.hpp"
#include "elfvc/rangecoder.hpp"

namespace elfvc {

namespace {

inline double round_half_away(double t) {
  return t >= 0.0 ? std::floor(t + 0.5) : std::ceil(t - 0.5);
}

inline int32_t clamp_symbol(double t) {
  if (t >= 2147483647.0) return 2147483647;
  if (t <= -2147483648.0) return -2147483648;
  return static_cast<int32_t>(t);
}

void check_model(const char* who, const std::vector<int>& shape,
                 const std::vector<double>& widths, const GaussianParams& p) {
  if (shape.size() != 3)
    throw std::invalid_argument(std::string(who) + ": codelayer must be (C,H,W)");
  if (static_cast<int>(widths.size()) != shape[0])
    throw std::invalid_argument(std::string(who) + ": " +
                                std::to_string(widths.size()) + " widths for " +
                                std::to_string(shape[0]) + " channels");
  for (double w : widths)
    if (!(w > 0.0))
      throw std::invalid_argument(std::string(who) + ": grid widths must be positive");
  if (p.mu.shape != shape || p.sigma.shape != shape)
    throw std::invalid_argument(std::string(who) + ": model shape mismatch");
}

}  // namespace

Tensor Codelayer::values() const {
  Tensor t = Tensor::zeros(shape);
  const int64_t plane = static_cast<int64_t>(shape[1]) * shape[2];
  for (int c = 0; c < shape[0]; ++c)
    for (int64_t i = 0; i < plane; ++i)
      t[c * plane + i] = static_cast<double>(symbols[c * plane + i]) * widths[c];
  return t;
}

bool Codelayer::operator==(const Codelayer& o) const {
  return shape == o.shape && symbols == o.symbols && widths == o.widths;
}

Codelayer quantize(const Tensor& x, const std::vector<double>& widths) {
  if (x.rank() != 3)
    throw std::invalid_argument("quantize: expected (C,H,W), got " + x.shape_str());
  if (static_cast<int>(widths.size()) != x.shape[0])
    throw std::invalid_argument("quantize: width count mismatch");
  for (double w : widths)
    if (!(w > 0.0)) throw std::invalid_argument("quantize: widths must be positive");
  Codelayer q;
  q.shape = x.shape;
  q.widths = widths;
  q.symbols.resize(static_cast<size_t>(x.numel()));
  const int64_t plane = static_cast<int64_t>(x.shape[1]) * x.shape[2];
  for (int c = 0; c < x.shape[0]; ++c)
    for (int64_t i = 0; i < plane; ++i)
      q.symbols[c * plane + i] =
          clamp_symbol(round_half_away(x[c * plane + i] / widths[c]));
  return q;
}

Codelayer quantize(const Tensor& x, double width) {
  if (x.rank() != 3)
    throw std::invalid_argument("quantize: expected (C,H,W), got " + x.shape_str());
  return quantize(x, std::vector<double>(x.shape[0], width));
}

// --------------------------------------------------------- probabilities --

namespace {

// P(z in [zl, zr]) under a standard normal, organized so both tails are
// computed as small erfc values rather than catastrophic 1-1 cancellations.
double normal_interval_prob(double zl, double zr) {
  double p;
  if (zl + zr >= 0.0) {
    p = 0.5 * (det_erfc(zl * mathconst::kInvSqrt2) -
               det_erfc(zr * mathconst::kInvSqrt2));
  } else {
    p = 0.5 * (det_erfc(-zr * mathconst::kInvSqrt2) -
               det_erfc(-zl * mathconst::kInvSqrt2));
  }
  if (p < 0.0) p = 0.0;
  if (p > 1.0) p = 1.0;
  return p;
}

}  // namespace

double discrete_gaussian_prob_unfloored(double q, double mu, double sigma,
                                        double width) {
  double s = sigma < kMinSigma ? kMinSigma : sigma;
  double zl = (q - 0.5 * width - mu) / s;
  double zr = (q + 0.5 * width - mu) / s;
  return normal_interval_prob(zl, zr);
}

double discrete_gaussian_prob(double q, double mu, double sigma, double width) {
  double p = discrete_gaussian_prob_unfloored(q, mu, sigma, width);
  return p < kMinProb ? kMinProb : p;
}

double codelength_bits(const Codelayer& layer, const GaussianParams& params) {
  check_model("codelength", layer.shape, layer.widths, params);
  const int64_t plane = static_cast<int64_t>(layer.shape[1]) * layer.shape[2];
  double bits = 0.0;
  for (int c = 0; c < layer.shape[0]; ++c) {
    double w = layer.widths[c];
    for (int64_t i = 0; i < plane; ++i) {
      int64_t e = c * plane + i;
      double p = discrete_gaussian_prob(static_cast<double>(layer.symbols[e]) * w,
                                        params.mu[e], params.sigma[e], w);
      bits -= det_log2(p);
    }
  }
  return bits;
}

Var codelength_bits_op(const Var& values, const Var& mu, const Var& sigma,
                       const Var& widths) {
  if (!values->value.same_shape(mu->value) || !values->value.same_shape(sigma->value))
    throw std::invalid_argument("codelength: values/mu/sigma shapes differ: " +
                                values->value.shape_str() + " " +
                                mu->value.shape_str() + " " + sigma->value.shape_str());
  Chw d = chw(values->value);
  if (widths->value.rank() != 1 || widths->value.shape[0] != d.c)
    throw std::invalid_argument("codelength: widths " + widths->value.shape_str() +
                                " for " + values->value.shape_str());

  const int64_t plane = d.plane();
  double bits = 0.0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      double w = widths->value[c];
      int64_t off = (static_cast<int64_t>(b) * d.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        int64_t e = off + i;
        double p = discrete_gaussian_prob_unfloored(values->value[e], mu->value[e],
                                                    sigma->value[e], w);
        bits -= det_log2(p < kMinProb ? kMinProb : p);
      }
    }

  Var vv = values, mv = mu, sv = sigma, wv = widths;
  return make_op("codelength_bits", Tensor::scalar(bits), {values, mu, sigma, widths},
                 [vv, mv, sv, wv, d, plane](Node& self) {
    const double gs = self.grad[0];
    constexpr double kInvLn2 = 1.44269504088896338700;
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < d.c; ++c) {
        double w = wv->value[c];
        int64_t off = (static_cast<int64_t>(b) * d.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          int64_t e = off + i;
          double sraw = sv->value[e];
          double s = sraw < kMinSigma ? kMinSigma : sraw;
          double zl = (vv->value[e] - 0.5 * w - mv->value[e]) / s;
          double zr = (vv->value[e] + 0.5 * w - mv->value[e]) / s;
          double p = normal_interval_prob(zl, zr);
          if (p <= kMinProb) continue;  // floored: constant 16-bit cost
          double phil = det_normal_pdf(zl);
          double phir = det_normal_pdf(zr);
          // d(-log2 p)/dp = -1/(p ln 2)
          double f = -gs * kInvLn2 / p;
          if (vv->requires_grad) vv->grad_buf()[e] += f * (phir - phil) / s;
          if (mv->requires_grad) mv->grad_buf()[e] += f * (phil - phir) / s;
          if (sv->requires_grad && sraw > kMinSigma)
            sv->grad_buf()[e] += f * (zl * phil - zr * phir) / s;
          if (wv->requires_grad)
            wv->grad_buf()[c] += f * 0.5 * (phir + phil) / s;
        }
      }
  });
}

// ---------------------------------------------------------- entropy code --

namespace {

// Integer probability table over a grid window plus one escape slot.
struct Pmf {
  int lo = 0, hi = 0;           // inclusive symbol window
  std::vector<uint32_t> cum;    // size bins+2: cum[i]..cum[i+1] per bin, last = escape
  int bins() const { return hi - lo + 1; }
};

// Deterministic table build shared by encoder and decoder.  Probabilities are
// quantized to a total of exactly kFreqTotal with >= 1 per slot; leftovers go
// to the largest remainders (ties to the lowest index) to keep the table
// close to the real distribution.
void build_pmf(double mu, double sigma, double width, Pmf& pmf,
               std::vector<double>& pbuf, std::vector<uint32_t>& fbuf,
               std::vector<int>& order) {
  double s = (sigma < kMinSigma ? kMinSigma : sigma) / width;
  double m = mu / width;
  double hw = 16.0 * s;
  if (hw < 2.0) hw = 2.0;
  double lod = m - hw, hid = m + hw;
  int lo = lod <= -kGridLimit ? -kGridLimit
                              : static_cast<int>(std::floor(lod));
  int hi = hid >= kGridLimit ? kGridLimit : static_cast<int>(std::ceil(hid));
  if (lo > kGridLimit || hi < -kGridLimit || lo > hi) {
    // Window entirely off-grid: keep one token bin, everything escapes.
    int k = static_cast<int>(round_half_away(m));
    if (k > kGridLimit) k = kGridLimit;
    if (k < -kGridLimit) k = -kGridLimit;
    lo = hi = k;
  }
  if (lo < -kGridLimit) lo = -kGridLimit;
  if (hi > kGridLimit) hi = kGridLimit;
  pmf.lo = lo;
  pmf.hi = hi;
  const int n = pmf.bins();

  // Real masses from successive CDF boundaries (distant tails underflow to 0,
  // which the +1 minimum below turns into the 2^-16 floor).
  pbuf.resize(static_cast<size_t>(n));
  double prev = det_normal_cdf((lo - 0.5 - m) / s);
  if (prev < 0.0) prev = 0.0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double next = det_normal_cdf((lo + i + 0.5 - m) / s);
    if (next < prev) next = prev;  // keep the CDF walk monotone in FP
    if (next > 1.0) next = 1.0;
    double p = next - prev;
    pbuf[static_cast<size_t>(i)] = p;
    total += p;
    prev = next;
  }
  double pesc = 1.0 - total;
  if (pesc < 0.0) pesc = 0.0;

  const int slots = n + 1;
  const uint32_t base = kFreqTotal - static_cast<uint32_t>(slots);
  fbuf.resize(static_cast<size_t>(slots));
  uint32_t used = 0;
  for (int i = 0; i < slots; ++i) {
    double p = i < n ? pbuf[static_cast<size_t>(i)] : pesc;
    uint32_t f = static_cast<uint32_t>(p * base) + 1;
    fbuf[static_cast<size_t>(i)] = f;
    used += f;
  }
  while (used > kFreqTotal) {  // unreachable given Σp <= 1, kept as insurance
    size_t imax = 0;
    for (size_t i = 1; i < fbuf.size(); ++i)
      if (fbuf[i] > fbuf[imax]) imax = i;
    --fbuf[imax];
    --used;
  }
  uint32_t deficit = kFreqTotal - used;
  if (deficit > 0) {
    // Largest remainder first, stable on index.
    order.resize(static_cast<size_t>(slots));
    std::iota(order.begin(), order.end(), 0);
    auto rem = [&](int i) {
      double p = i < n ? pbuf[static_cast<size_t>(i)] : pesc;
      double t = p * base;
      return t - std::floor(t);
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return rem(a) > rem(b); });
    for (uint32_t k = 0; k < deficit; ++k)
      fbuf[static_cast<size_t>(order[k % slots])] += 1;
  }

  pmf.cum.resize(static_cast<size_t>(slots + 1));
  pmf.cum[0] = 0;
  for (int i = 0; i < slots; ++i)
    pmf.cum[static_cast<size_t>(i + 1)] = pmf.cum[static_cast<size_t>(i)] + fbuf[static_cast<size_t>(i)];
}

struct PmfScratch {
  Pmf pmf;
  std::vector<double> pbuf;
  std::vector<uint32_t> fbuf;
  std::vector<int> order;
};

void encode_group(const Codelayer& layer, const GaussianParams& params, int c0,
                  int c1, std::vector<uint8_t>& out) {
  RangeEncoder enc;
  PmfScratch sc;
  const int64_t plane = static_cast<int64_t>(layer.shape[1]) * layer.shape[2];
  for (int c = c0; c < c1; ++c) {
    double w = layer.widths[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) {
      int64_t e = c * plane + i;
      build_pmf(params.mu[e], params.sigma[e], w, sc.pmf, sc.pbuf, sc.fbuf, sc.order);
      const Pmf& pm = sc.pmf;
      int32_t k = layer.symbols[static_cast<size_t>(e)];
      const int esc = pm.bins();
      if (k >= pm.lo && k <= pm.hi) {
        int idx = k - pm.lo;
        enc.encode(pm.cum[static_cast<size_t>(idx)],
                   pm.cum[static_cast<size_t>(idx + 1)] - pm.cum[static_cast<size_t>(idx)]);
      } else {
        enc.encode(pm.cum[static_cast<size_t>(esc)],
                   pm.cum[static_cast<size_t>(esc + 1)] - pm.cum[static_cast<size_t>(esc)]);
        uint32_t raw = static_cast<uint32_t>(k);
        for (int s = 24; s >= 0; s -= 8) {
          uint32_t byte = (raw >> s) & 0xff;
          enc.encode(byte << 8, 1u << 8);  // uniform byte: exactly 8 bits
        }
      }
    }
  }
  std::vector<uint8_t> bytes = enc.finish();
  out.insert(out.end(), bytes.begin(), bytes.end());
}

}  // namespace

std::vector<uint8_t> range_encode(const Codelayer& layer,
                                  const GaussianParams& params) {
  check_model("range_encode", layer.shape, layer.widths, params);
  const int C = layer.channels();
  const int groups = group_count(C);
  if (groups > 255) throw std::invalid_argument("range_encode: too many channel groups");
  std::vector<uint8_t> out;
  out.push_back(static_cast<uint8_t>(groups));
  for (int g = 0; g < groups; ++g) {
    int c0 = g * kChannelsPerGroup;
    int c1 = std::min(C, c0 + kChannelsPerGroup);
    std::vector<uint8_t> body;
    encode_group(layer, params, c0, c1, body);
    uint32_t len = static_cast<uint32_t>(body.size());
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>(len >> s));
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

Codelayer range_decode(const std::vector<uint8_t>& bytes,
                       const std::vector<int>& shape,
                       const std::vector<double>& widths,
                       const GaussianParams& params) {
  check_model("range_decode", shape, widths, params);
  Codelayer layer;
  layer.shape = shape;
  layer.widths = widths;
  layer.symbols.assign(static_cast<size_t>(checked_numel(shape)), 0);

  const int C = shape[0];
  const int groups = group_count(C);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > bytes.size())
      throw std::runtime_error("range_decode: truncated payload");
  };
  need(1);
  if (bytes[pos++] != static_cast<uint8_t>(groups))
    throw std::runtime_error("range_decode: group count mismatch");

  const int64_t plane = static_cast<int64_t>(shape[1]) * shape[2];
  PmfScratch sc;
  for (int g = 0; g < groups; ++g) {
    need(4);
    uint32_t len = 0;
    for (int s = 0; s < 32; s += 8) len |= static_cast<uint32_t>(bytes[pos++]) << s;
    need(len);
    std::vector<uint8_t> body(bytes.begin() + static_cast<long>(pos),
                              bytes.begin() + static_cast<long>(pos + len));
    pos += len;
    RangeDecoder dec(body);
    int c0 = g * kChannelsPerGroup;
    int c1 = std::min(C, c0 + kChannelsPerGroup);
    for (int c = c0; c < c1; ++c) {
      double w = widths[static_cast<size_t>(c)];
      for (int64_t i = 0; i < plane; ++i) {
        int64_t e = c * plane + i;
        build_pmf(params.mu[e], params.sigma[e], w, sc.pmf, sc.pbuf, sc.fbuf, sc.order);
        const Pmf& pm = sc.pmf;
        uint32_t target = dec.decode_target();
        // binary search: greatest slot with cum <= target
        int lo = 0, hi = pm.bins();  // slots indices 0..bins (escape last)
        while (lo < hi) {
          int mid = (lo + hi + 1) >> 1;
          if (pm.cum[static_cast<size_t>(mid)] <= target) lo = mid;
          else hi = mid - 1;
        }
        dec.consume(pm.cum[static_cast<size_t>(lo)],
                    pm.cum[static_cast<size_t>(lo + 1)] - pm.cum[static_cast<size_t>(lo)]);
        if (lo < pm.bins()) {
          layer.symbols[static_cast<size_t>(e)] = pm.lo + lo;
        } else {
          uint32_t raw = 0;
          for (int b = 0; b < 4; ++b) {
            uint32_t t = dec.decode_target();
            uint32_t byte = t >> 8;
            dec.consume(byte << 8, 1u << 8);
            raw = (raw << 8) | byte;
          }
          layer.symbols[static_cast<size_t>(e)] = static_cast<int32_t>(raw);
        }
      }
    }
  }
  if (pos != bytes.size())
    throw std::runtime_error("range_decode: trailing bytes in payload");
  return layer;
}

// ------------------------------------------------------- spatial bit map --

namespace {

// Adds one codelayer's bits into an (H,W) accumulator.  Each cell's bits are
// split evenly across the pixels that nearest-map to it, so totals conserve
// even when the frame is not an exact multiple of the cell grid.
void accumulate_bits(const Codelayer& q, const GaussianParams& p, Tensor& acc) {
  const int H = acc.shape[0], W = acc.shape[1];
  const int qh = q.height(), qw = q.width();
  Tensor cell = Tensor::zeros({qh, qw});
  const int64_t plane = static_cast<int64_t>(qh) * qw;
  for (int c = 0; c < q.channels(); ++c) {
    double w = q.widths[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) {
      int64_t e = c * plane + i;
      double prob = discrete_gaussian_prob(
          static_cast<double>(q.symbols[static_cast<size_t>(e)]) * w, p.mu[e],
          p.sigma[e], w);
      cell[i] -= det_log2(prob);
    }
  }
  Tensor count = Tensor::zeros({qh, qw});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      count[static_cast<int64_t>(y) * qh / H * qw + static_cast<int64_t>(x) * qw / W] += 1.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int64_t ci = static_cast<int64_t>(y) * qh / H * qw + static_cast<int64_t>(x) * qw / W;
      acc[static_cast<int64_t>(y) * W + x] += cell[ci] / count[ci];
    }
}

}  // namespace

BitAllocationMap spatial_bit_map(const Codelayer& q0, const GaussianParams& p0,
                                 const Codelayer& q1, const GaussianParams& p1,
                                 int frame_h, int frame_w) {
  BitAllocationMap out;
  out.map = Tensor::zeros({frame_h, frame_w});
  accumulate_bits(q0, p0, out.map);
  accumulate_bits(q1, p1, out.map);
  double total = 0.0;
  for (double v : out.map.data) total += v;
  out.total_bits = total;
  return out;
}

}  // namespace elfvc
