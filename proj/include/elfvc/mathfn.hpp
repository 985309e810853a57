#pragma once

// Deterministic scalar math.
//
// Encoder and decoder must agree on every probability bit-for-bit, and golden
// bitstreams must survive rebuilds on different hosts.  libm gives no such
// guarantee (results vary across vendors and versions), so the transcendental
// functions used anywhere near the entropy coder are implemented here from
// polynomial series and continued fractions, with a fixed IEEE-754 evaluation
// order.  Builds must keep FMA contraction off (see top-level CMakeLists).
//
// Accuracy targets (verified by tests against high-precision oracles):
//   det_exp / det_log     <= ~4 ulp relative
//   det_erfc              <= ~1e-10 relative over |x| <= 27
//   det_normal_cdf        derived from det_erfc

namespace elfvc {

// e^x.  Overflow -> +inf, deep underflow -> 0, NaN in -> NaN out.
double det_exp(double x);

// Natural log.  log(0) -> -inf, log(x<0) -> NaN.
double det_log(double x);

double det_log2(double x);
double det_log10(double x);

// 10^x, via det_exp.
double det_pow10(double x);

// Complementary error function, both tails.
double det_erfc(double x);

// Standard normal CDF and PDF.
double det_normal_cdf(double z);
double det_normal_pdf(double z);

// sigmoid and softplus built on det_exp, stable in both tails.
double det_sigmoid(double x);
double det_softplus(double x);

// Sine / cosine with Cody-Waite argument reduction, adequate to |x| ~ 1e9.
double det_sin(double x);
double det_cos(double x);

namespace mathconst {
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 6.28318530717958647692;
inline constexpr double kLn2 = 6.93147180559945309417e-01;
inline constexpr double kInvLn2 = 1.44269504088896338700e+00;
inline constexpr double kLn10 = 2.30258509299404568402e+00;
inline constexpr double kInvSqrt2 = 7.07106781186547524401e-01;
inline constexpr double kInvSqrt2Pi = 3.98942280401432677940e-01;
}  // namespace mathconst

}  // namespace elfvc
