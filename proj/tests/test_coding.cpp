#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "elfvc/codelayer.hpp"
#include "elfvc/mathfn.hpp"
#include "elfvc/rangecoder.hpp"
#include "elfvc/rng.hpp"
#include "testutil.hpp"

using namespace elfvc;
using testutil::fd_check;
using testutil::random_tensor;

// sigma (in grid units) whose one-step mass is exactly 1/2:
// P(|z| <= 0.5/s) = 0.5  =>  0.5/s = z_{0.75} = 0.674489750196082
constexpr double kHalfProbSigma = 0.7413011092528010;

// ---------------------------------------------------------- range coder ----

namespace {

// Random frequency table with `a` symbols summing to kFreqTotal, each >= 1.
std::vector<uint32_t> random_freqs(int a, Rng& rng) {
  std::vector<uint32_t> f(a, 1);
  uint32_t left = kFreqTotal - a;
  for (int i = 0; i < a - 1 && left > 0; ++i) {
    uint32_t take = static_cast<uint32_t>(rng.uniform_int(0, left / 2));
    f[i] += take;
    left -= take;
  }
  f[a - 1] += left;
  return f;
}

}  // namespace

TEST_CASE("range coder roundtrips random streams near the entropy estimate") {
  Rng rng(1001);
  for (int trial = 0; trial < 300; ++trial) {
    int a = static_cast<int>(rng.uniform_int(2, 300));
    std::vector<uint32_t> freqs = random_freqs(a, rng);
    std::vector<uint32_t> cum(a + 1, 0);
    for (int i = 0; i < a; ++i) cum[i + 1] = cum[i] + freqs[i];
    REQUIRE(cum[a] == kFreqTotal);

    int n = static_cast<int>(rng.uniform_int(1, 800));
    std::vector<int> symbols(n);
    double est_bits = 0.0;
    RangeEncoder enc;
    for (int i = 0; i < n; ++i) {
      // draw from the table itself so the estimate is the true entropy cost
      uint32_t t = static_cast<uint32_t>(rng.uniform_int(0, kFreqTotal - 1));
      int s = 0;
      while (cum[s + 1] <= t) ++s;
      symbols[i] = s;
      est_bits -= det_log2(static_cast<double>(freqs[s]) / kFreqTotal);
      enc.encode(cum[s], freqs[s]);
    }
    std::vector<uint8_t> bytes = enc.finish();
    double actual_bits = 8.0 * static_cast<double>(bytes.size());
    CHECK(actual_bits <= est_bits + 48.0);  // 32-bit flush + slack
    CHECK(actual_bits >= est_bits - 1.0);

    RangeDecoder dec(bytes);
    for (int i = 0; i < n; ++i) {
      uint32_t t = dec.decode_target();
      int s = 0;
      while (cum[s + 1] <= t) ++s;
      REQUIRE(s == symbols[i]);
      dec.consume(cum[s], freqs[s]);
    }
  }
}

TEST_CASE("range coder validates frequency intervals and empty streams") {
  RangeEncoder enc;
  CHECK_THROWS_AS(enc.encode(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(65000, 1000), std::invalid_argument);
  RangeEncoder empty;
  std::vector<uint8_t> bytes = empty.finish();
  CHECK(bytes.size() == 4);  // flush only
}

// ------------------------------------------------------------- quantize ----

TEST_CASE("quantize snaps to per-channel grids with half-away ties") {
  Tensor x = Tensor::from({2, 1, 2}, {0.74, -0.25, 0.625, -0.625});
  Codelayer q = quantize(x, {0.5, 0.25});
  CHECK(q.symbols[0] == 1);    // 0.74/0.5 = 1.48
  CHECK(q.symbols[1] == -1);   // -0.25/0.5 = -0.5, tie away from zero
  CHECK(q.symbols[2] == 3);    // 0.625/0.25 = 2.5, tie away from zero
  CHECK(q.symbols[3] == -3);
  Tensor v = q.values();
  CHECK(v[0] == 0.5);
  CHECK(v[1] == -0.5);
  CHECK(v[2] == 0.75);

  CHECK_THROWS_AS(quantize(x, std::vector<double>{0.5}), std::invalid_argument);
  CHECK_THROWS_AS(quantize(x, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(quantize(Tensor::zeros({2, 2}), 1.0), std::invalid_argument);
}

TEST_CASE("quantize is idempotent on its own output") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({3, 5, 4}, rng, -20.0, 20.0);
    std::vector<double> w = {0.3, 1.0, 2.5};
    Codelayer q1 = quantize(x, w);
    Codelayer q2 = quantize(q1.values(), w);
    CHECK(q1 == q2);
  }
}

// -------------------------------------------------------- probabilities ----

TEST_CASE("discrete gaussian probability matches the CDF oracle") {
  // on-grid symbol at the mean, sigma 1, width 1
  double p = discrete_gaussian_prob(0.0, 0.0, 1.0, 1.0);
  CHECK(p == doctest::Approx(0.3829249225480263).epsilon(1e-12));
  // against an independent reference: 2*Phi(0.5) - 1 via libm erfc
  double ref = std::erfc(-0.5 / std::sqrt(2.0)) - 1.0;
  CHECK(p == doctest::Approx(ref).epsilon(1e-12));

  // symmetry around an on-grid mean
  for (int k = 1; k <= 6; ++k) {
    double pk = discrete_gaussian_prob_unfloored(k * 0.5, 2.0, 0.8, 0.5);
    double mk = discrete_gaussian_prob_unfloored(-k * 0.5 + 4.0, 2.0, 0.8, 0.5);
    CHECK(pk == doctest::Approx(mk).epsilon(1e-12));
  }

  // flooring
  CHECK(discrete_gaussian_prob(50.0, 0.0, 0.5, 1.0) == kMinProb);
  CHECK(discrete_gaussian_prob_unfloored(50.0, 0.0, 0.5, 1.0) < kMinProb);
}

TEST_CASE("full-grid mass telescopes to one before flooring") {
  double mu = 0.37, sigma = 2.1, w = 0.7;
  double sum = 0.0;
  for (int k = -200; k <= 200; ++k)  // +-66 sigma, everything else underflows
    sum += discrete_gaussian_prob_unfloored(k * w, mu, sigma, w);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("half-probability sigma constant is what it claims") {
  CHECK(det_normal_cdf(0.5 / kHalfProbSigma) == doctest::Approx(0.75).epsilon(1e-12));
  double p = discrete_gaussian_prob(0.0, 0.0, kHalfProbSigma, 1.0);
  CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

// ----------------------------------------------------------- codelength ----

namespace {

GaussianParams const_params(const std::vector<int>& shape, double mu, double sigma) {
  GaussianParams p;
  p.mu = Tensor::full(shape, mu);
  p.sigma = Tensor::full(shape, sigma);
  return p;
}

}  // namespace

TEST_CASE("codelength accumulates -log2 p over elements") {
  // N elements with p exactly 1/2 -> exactly N bits (to FP accuracy)
  std::vector<int> shape = {4, 8, 8};
  Codelayer q;
  q.shape = shape;
  q.widths = {1.0, 1.0, 1.0, 1.0};
  q.symbols.assign(4 * 8 * 8, 0);
  double bits = codelength_bits(q, const_params(shape, 0.0, kHalfProbSigma));
  CHECK(bits == doctest::Approx(256.0).epsilon(1e-9));

  // single element, unit model
  Codelayer one;
  one.shape = {1, 1, 1};
  one.widths = {1.0};
  one.symbols = {0};
  double b1 = codelength_bits(one, const_params({1, 1, 1}, 0.0, 1.0));
  CHECK(b1 == doctest::Approx(1.3848665342909897).epsilon(1e-9));
  CHECK(b1 == doctest::Approx(-std::log2(0.3829249225480263)).epsilon(1e-12));

  // near-certain zeros cost nearly nothing
  Codelayer z;
  z.shape = {2, 4, 4};
  z.widths = {1.0, 1.0};
  z.symbols.assign(32, 0);
  double bz = codelength_bits(z, const_params({2, 4, 4}, 0.0, 0.05));
  CHECK(bz >= 0.0);
  CHECK(bz < 1e-9);
}

TEST_CASE("codelength gradients match finite differences on the noise path") {
  Rng rng(1234);
  Var values = param(random_tensor({3, 4, 4}, rng, -1.5, 1.5));
  Var mu = param(random_tensor({3, 4, 4}, rng, -0.8, 0.8));
  Tensor sig0 = random_tensor({3, 4, 4}, rng, 0.6, 2.0);
  Var sigma = param(sig0);
  Var widths = param(Tensor::from({3}, {0.5, 1.1, 0.8}));
  auto res = fd_check({values, mu, sigma, widths}, [&] {
    return codelength_bits_op(values, mu, sigma, widths);
  });
  INFO(res.worst);
  CHECK(res.checked >= 100);
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("codelength gradients vanish where the probability floor binds") {
  Var values = param(Tensor::from({1, 1, 1}, {30.0}));
  Var mu = param(Tensor::from({1, 1, 1}, {0.0}));
  Var sigma = param(Tensor::from({1, 1, 1}, {0.5}));
  Var widths = param(Tensor::from({1}, {1.0}));
  Var bits = codelength_bits_op(values, mu, sigma, widths);
  CHECK(bits->value[0] == doctest::Approx(16.0).epsilon(1e-12));
  backward(bits);
  CHECK(values->grad_buf()[0] == 0.0);
  CHECK(mu->grad_buf()[0] == 0.0);
  CHECK(sigma->grad_buf()[0] == 0.0);
  CHECK(widths->grad_buf()[0] == 0.0);
}

TEST_CASE("codelength handles batched rank-4 inputs") {
  Rng rng(55);
  Var v3 = param(random_tensor({2, 3, 3}, rng));
  Var m3 = constant(Tensor::zeros({2, 3, 3}));
  Var s3 = constant(Tensor::full({2, 3, 3}, 1.0));
  Var w = constant(Tensor::from({2}, {1.0, 1.0}));
  double single = codelength_bits_op(v3, m3, s3, w)->value[0];

  Tensor batched = Tensor::zeros({2, 2, 3, 3});
  std::memcpy(batched.data.data(), v3->value.data.data(), sizeof(double) * 18);
  std::memcpy(batched.data.data() + 18, v3->value.data.data(), sizeof(double) * 18);
  Var v4 = param(batched);
  double both = codelength_bits_op(v4, constant(Tensor::zeros({2, 2, 3, 3})),
                                   constant(Tensor::full({2, 2, 3, 3}, 1.0)), w)->value[0];
  CHECK(both == doctest::Approx(2.0 * single).epsilon(1e-12));
}

// ------------------------------------------------------- entropy coding ----

namespace {

// Draws each symbol from its own element model (inverse CDF over the grid),
// so payload sizes should track the codelength estimate.
Codelayer sample_from_model(const std::vector<int>& shape,
                            const std::vector<double>& widths,
                            const GaussianParams& params, Rng& rng) {
  Codelayer q;
  q.shape = shape;
  q.widths = widths;
  q.symbols.resize(static_cast<size_t>(checked_numel(shape)));
  const int64_t plane = static_cast<int64_t>(shape[1]) * shape[2];
  for (int c = 0; c < shape[0]; ++c) {
    double w = widths[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) {
      int64_t e = c * plane + i;
      double z = rng.normal(params.mu[e], std::max(params.sigma[e], kMinSigma));
      double t = z / w;
      double r = t >= 0 ? std::floor(t + 0.5) : std::ceil(t - 0.5);
      if (r > 255) r = 255;
      if (r < -255) r = -255;
      q.symbols[static_cast<size_t>(e)] = static_cast<int32_t>(r);
    }
  }
  return q;
}

double body_bits(const std::vector<uint8_t>& payload) {
  // Payload framing: u8 group count, per group u32 length + body.
  size_t pos = 0;
  int groups = payload[pos++];
  double bits = 0.0;
  for (int g = 0; g < groups; ++g) {
    uint32_t len = 0;
    for (int s = 0; s < 32; s += 8) len |= static_cast<uint32_t>(payload[pos++]) << s;
    pos += len;
    bits += 8.0 * len;
  }
  REQUIRE(pos == payload.size());
  return bits;
}

}  // namespace

TEST_CASE("entropy coding roundtrips model-consistent layers within the bit bound") {
  Rng rng(2024);
  for (int trial = 0; trial < 400; ++trial) {
    int C = static_cast<int>(rng.uniform_int(1, 24));
    int H = static_cast<int>(rng.uniform_int(1, 6));
    int W = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<int> shape = {C, H, W};
    std::vector<double> widths(C);
    for (double& w : widths) w = det_exp(rng.uniform(-2.5, 1.2));
    GaussianParams params;
    params.mu = Tensor::zeros(shape);
    params.sigma = Tensor::zeros(shape);
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c)
      for (int64_t i = 0; i < plane; ++i) {
        params.mu[c * plane + i] = rng.uniform(-6.0, 6.0) * widths[c];
        params.sigma[c * plane + i] = det_exp(rng.uniform(-2.0, 1.6)) * widths[c];
      }
    Codelayer q = sample_from_model(shape, widths, params, rng);

    std::vector<uint8_t> payload = range_encode(q, params);
    Codelayer back = range_decode(payload, shape, widths, params);
    REQUIRE(back == q);

    double est = codelength_bits(q, params);
    double actual = body_bits(payload);
    CHECK(actual <= est + overhead_bound_bits(group_count(C)));
    CHECK(actual >= est - 1.0);
  }
}

TEST_CASE("entropy coding roundtrips extreme sigma and escaped symbols") {
  Rng rng(31337);
  for (int trial = 0; trial < 200; ++trial) {
    int C = static_cast<int>(rng.uniform_int(1, 10));
    std::vector<int> shape = {C, 3, 3};
    std::vector<double> widths(C, 1.0);
    GaussianParams params;
    params.mu = Tensor::zeros(shape);
    params.sigma = Tensor::zeros(shape);
    Codelayer q;
    q.shape = shape;
    q.widths = widths;
    q.symbols.resize(static_cast<size_t>(C) * 9);
    for (int64_t e = 0; e < q.numel(); ++e) {
      switch (rng.uniform_int(0, 3)) {
        case 0:  // far off-grid mean, huge sigma
          params.mu[e] = rng.uniform(-1e7, 1e7);
          params.sigma[e] = det_exp(rng.uniform(2.0, 14.0));
          q.symbols[static_cast<size_t>(e)] = static_cast<int32_t>(rng.uniform_int(-255, 255));
          break;
        case 1:  // tiny sigma, escaped symbol far outside the window
          params.sigma[e] = 1e-9;
          q.symbols[static_cast<size_t>(e)] = static_cast<int32_t>(rng.uniform_int(-2000000, 2000000));
          break;
        case 2:  // plain element
          params.sigma[e] = 1.3;
          q.symbols[static_cast<size_t>(e)] = static_cast<int32_t>(rng.uniform_int(-3, 3));
          break;
        default:  // escape at the int32 extremes
          params.sigma[e] = 2.0;
          q.symbols[static_cast<size_t>(e)] =
              (rng.uniform_int(0, 1) ? 2147483647 : -2147483647 - 1);
      }
    }
    std::vector<uint8_t> payload = range_encode(q, params);
    Codelayer back = range_decode(payload, shape, widths, params);
    REQUIRE(back == q);
  }
}

TEST_CASE("payload of 4096 half-probability elements is ~512 bytes plus overhead") {
  std::vector<int> shape = {16, 16, 16};
  Codelayer q;
  q.shape = shape;
  q.widths.assign(16, 1.0);
  q.symbols.assign(4096, 0);
  GaussianParams params = const_params(shape, 0.0, kHalfProbSigma);
  double est = codelength_bits(q, params);
  CHECK(est == doctest::Approx(4096.0).epsilon(1e-9));
  std::vector<uint8_t> payload = range_encode(q, params);
  double bodies = body_bits(payload) / 8.0;  // bytes
  CHECK(bodies >= 512.0);
  CHECK(bodies <= 512.0 + overhead_bound_bits(group_count(16)) / 8.0);
}

TEST_CASE("near-certain symbols cost far less than a bit each") {
  std::vector<int> shape = {32, 8, 8};
  Codelayer q;
  q.shape = shape;
  q.widths.assign(32, 1.0);
  q.symbols.assign(2048, 0);
  GaussianParams params = const_params(shape, 0.0, 0.15);  // p(0) ~ 0.99914
  std::vector<uint8_t> payload = range_encode(q, params);
  double bits_per_elem = body_bits(payload) / 2048.0;
  CHECK(bits_per_elem < 0.1);
  CHECK(range_decode(payload, shape, q.widths, params) == q);
}

TEST_CASE("range_decode rejects truncated or corrupted framing") {
  std::vector<int> shape = {3, 2, 2};
  std::vector<double> widths = {1.0, 1.0, 1.0};
  GaussianParams params = const_params(shape, 0.0, 1.0);
  Codelayer q;
  q.shape = shape;
  q.widths = widths;
  q.symbols.assign(12, 1);
  std::vector<uint8_t> payload = range_encode(q, params);

  std::vector<uint8_t> cut(payload.begin(), payload.begin() + 3);
  CHECK_THROWS_AS(range_decode(cut, shape, widths, params), std::runtime_error);
  std::vector<uint8_t> wrong = payload;
  wrong[0] = 9;  // group count lie
  CHECK_THROWS_AS(range_decode(wrong, shape, widths, params), std::runtime_error);
  std::vector<uint8_t> extra = payload;
  extra.push_back(0);
  CHECK_THROWS_AS(range_decode(extra, shape, widths, params), std::runtime_error);
}

// ------------------------------------------------------- spatial bit map ----

TEST_CASE("spatial bit map spreads cell bits uniformly and conserves totals") {
  // 8 channels at 4x4 cells, each element exactly 1 bit -> 8 bits per cell;
  // upsampled to 64x64 each pixel carries 8/256 bits.
  std::vector<int> s0 = {8, 4, 4};
  Codelayer q0;
  q0.shape = s0;
  q0.widths.assign(8, 1.0);
  q0.symbols.assign(128, 0);
  GaussianParams p0 = const_params(s0, 0.0, kHalfProbSigma);

  // a q1 that costs exactly zero bits keeps the per-pixel value clean
  std::vector<int> s1 = {1, 1, 1};
  Codelayer q1;
  q1.shape = s1;
  q1.widths = {1.0};
  q1.symbols = {0};
  GaussianParams p1 = const_params(s1, 0.0, 0.05);
  REQUIRE(codelength_bits(q1, p1) == 0.0);

  BitAllocationMap bm = spatial_bit_map(q0, p0, q1, p1, 64, 64);
  CHECK(bm.map.shape == std::vector<int>{64, 64});
  for (int64_t i = 0; i < bm.map.numel(); ++i)
    CHECK(bm.map[i] == doctest::Approx(8.0 / 256.0).epsilon(1e-9));
  double cl = codelength_bits(q0, p0) + codelength_bits(q1, p1);
  CHECK(bm.total_bits == doctest::Approx(cl).epsilon(1e-6));
}

TEST_CASE("spatial bit map peaks at a hot cell's pixel block") {
  std::vector<int> s0 = {4, 4, 4};
  Codelayer q0;
  q0.shape = s0;
  q0.widths.assign(4, 1.0);
  q0.symbols.assign(64, 0);
  q0.symbols[5] = 9;  // channel 0, cell (1,1): improbable symbol, many bits
  GaussianParams p0 = const_params(s0, 0.0, 1.0);
  std::vector<int> s1 = {1, 1, 1};
  Codelayer q1;
  q1.shape = s1;
  q1.widths = {1.0};
  q1.symbols = {0};
  GaussianParams p1 = const_params(s1, 0.0, 0.05);

  BitAllocationMap bm = spatial_bit_map(q0, p0, q1, p1, 32, 32);
  double peak = 0.0;
  int64_t arg = -1;
  for (int64_t i = 0; i < bm.map.numel(); ++i)
    if (bm.map[i] > peak) {
      peak = bm.map[i];
      arg = i;
    }
  int y = static_cast<int>(arg / 32), x = static_cast<int>(arg % 32);
  CHECK(y >= 8);
  CHECK(y < 16);
  CHECK(x >= 8);
  CHECK(x < 16);
  // conservation under the hot cell too
  double cl = codelength_bits(q0, p0) + codelength_bits(q1, p1);
  CHECK(bm.total_bits == doctest::Approx(cl).epsilon(1e-6));
}
