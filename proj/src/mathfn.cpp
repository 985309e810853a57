#include "elfvc/mathfn.hpp"

#include <cmath>
#include <limits>

namespace elfvc {

namespace {

// Cody-Waite split of ln 2: kLn2Hi + kLn2Lo == ln 2 to ~100 bits, and
// kLn2Hi has enough trailing zero bits that k * kLn2Hi is exact for |k| < 2^16.
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Inverse factorials 1/2! .. 1/13!, exact quotients of integer-valued doubles.
constexpr double kInvFact[] = {
    1.0 / 2.0,          1.0 / 6.0,          1.0 / 24.0,
    1.0 / 120.0,        1.0 / 720.0,        1.0 / 5040.0,
    1.0 / 40320.0,      1.0 / 362880.0,     1.0 / 3628800.0,
    1.0 / 39916800.0,   1.0 / 479001600.0,  1.0 / 6227020800.0,
};

// exp(r) for |r| <= ln2/2, degree-13 Taylor evaluated by Horner.
double exp_small(double r) {
  double p = kInvFact[11];
  for (int i = 10; i >= 0; --i) p = p * r + kInvFact[i];
  return 1.0 + r * (1.0 + r * p);
}

}  // namespace

double det_exp(double x) {
  if (std::isnan(x)) return kNan;
  if (x > 709.782712893384) return kInf;
  if (x < -745.2) return 0.0;
  // x = k*ln2 + r, |r| <= ln2/2.
  double kd = std::floor(x * mathconst::kInvLn2 + 0.5);
  int k = static_cast<int>(kd);
  double r = (x - kd * kLn2Hi) - kd * kLn2Lo;
  return std::ldexp(exp_small(r), k);
}

double det_log(double x) {
  if (std::isnan(x) || x < 0.0) return kNan;
  if (x == 0.0) return -kInf;
  if (std::isinf(x)) return kInf;
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    --e;
  }
  // ln m = 2 atanh(s), s = (m-1)/(m+1), |s| <= 0.1716.
  double s = (m - 1.0) / (m + 1.0);
  double z = s * s;
  double p = 1.0 / 25.0;
  for (int k = 23; k >= 3; k -= 2) p = p * z + 1.0 / static_cast<double>(k);
  double lnm = 2.0 * s * (1.0 + z * p);
  double ed = static_cast<double>(e);
  return ed * kLn2Hi + (ed * kLn2Lo + lnm);
}

double det_log2(double x) { return det_log(x) * mathconst::kInvLn2; }

double det_log10(double x) {
  return det_log(x) * 4.34294481903251827651e-01;  // 1/ln 10
}

double det_pow10(double x) { return det_exp(x * mathconst::kLn10); }

namespace {

// erf(x) by Taylor series, reliable for |x| < ~2 where cancellation in
// 1 - erf stays below ~1e-11 relative of the erfc result.
double erf_series(double x) {
  constexpr double kTwoOverSqrtPi = 1.12837916709551257390;
  double x2 = x * x;
  double term = x;  // x^(2n+1) / n!
  double sum = x;
  for (int n = 1; n <= 40; ++n) {
    term *= -x2 / static_cast<double>(n);
    double add = term / static_cast<double>(2 * n + 1);
    double next = sum + add;
    if (next == sum) break;
    sum = next;
  }
  return kTwoOverSqrtPi * sum;
}

// erfc(x) for x >= 2 via the Laplace continued fraction
//   erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
// evaluated with the modified Lentz algorithm.  Termination is input-driven
// and therefore deterministic for a given x.
double erfc_cf(double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kInvSqrtPi = 5.64189583547756286948e-01;
  double f = x;
  double c = f;
  double d = 0.0;
  for (int n = 1; n <= 300; ++n) {
    double a = 0.5 * static_cast<double>(n);
    d = x + a * d;
    if (d == 0.0) d = kTiny;
    c = x + a / c;
    if (c == 0.0) c = kTiny;
    d = 1.0 / d;
    double delta = c * d;
    f *= delta;
    if (delta > 0.99999999999999989 && delta < 1.00000000000000011) break;
  }
  return det_exp(-x * x) * kInvSqrtPi / f;
}

}  // namespace

double det_erfc(double x) {
  if (std::isnan(x)) return kNan;
  double a = std::fabs(x);
  double r;
  if (a < 2.0) {
    r = 1.0 - erf_series(a);
  } else if (a < 27.5) {
    r = erfc_cf(a);
  } else {
    r = 0.0;  // below the smallest subnormal
  }
  return x < 0.0 ? 2.0 - r : r;
}

double det_normal_cdf(double z) {
  return 0.5 * det_erfc(-z * mathconst::kInvSqrt2);
}

double det_normal_pdf(double z) {
  return mathconst::kInvSqrt2Pi * det_exp(-0.5 * z * z);
}

double det_sigmoid(double x) {
  if (x >= 0.0) {
    double e = det_exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = det_exp(x);
  return e / (1.0 + e);
}

double det_softplus(double x) {
  // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
  double e = det_exp(-std::fabs(x));
  double base = x > 0.0 ? x : 0.0;
  return base + det_log(1.0 + e);
}

namespace {

// Cody-Waite split of pi/2, enough for |x| up to ~1e9.
constexpr double kPio2Hi = 1.57079632673412561417e+00;
constexpr double kPio2Lo = 6.07710050650619224932e-11;
constexpr double kPio2Lo2 = 2.02226624879595063154e-21;

double sin_poly(double r) {
  // sin(r), |r| <= pi/4, degree 13.
  double z = r * r;
  double p = -1.0 / 6227020800.0;
  p = p * z + 1.0 / 39916800.0;
  p = p * z - 1.0 / 362880.0;
  p = p * z + 1.0 / 5040.0;
  p = p * z - 1.0 / 120.0;
  p = p * z + 1.0 / 6.0;
  return r - r * z * p;
}

double cos_poly(double r) {
  // cos(r), |r| <= pi/4, degree 14.
  double z = r * r;
  double p = 1.0 / 87178291200.0;
  p = p * z - 1.0 / 479001600.0;
  p = p * z + 1.0 / 3628800.0;
  p = p * z - 1.0 / 40320.0;
  p = p * z + 1.0 / 720.0;
  p = p * z - 1.0 / 24.0;
  p = p * z + 1.0 / 2.0;
  return 1.0 - z * p;
}

void reduce_pio2(double x, int* quadrant, double* r) {
  double kd = std::floor(x * 6.36619772367581382433e-01 + 0.5);  // 2/pi
  double t = (x - kd * kPio2Hi) - kd * kPio2Lo;
  *r = t - kd * kPio2Lo2;
  *quadrant = static_cast<int>(kd - std::floor(kd / 4.0) * 4.0);
}

}  // namespace

double det_sin(double x) {
  if (!std::isfinite(x)) return kNan;
  int q;
  double r;
  reduce_pio2(x, &q, &r);
  switch (q) {
    case 0: return sin_poly(r);
    case 1: return cos_poly(r);
    case 2: return -sin_poly(r);
    default: return -cos_poly(r);
  }
}

double det_cos(double x) {
  if (!std::isfinite(x)) return kNan;
  int q;
  double r;
  reduce_pio2(x, &q, &r);
  switch (q) {
    case 0: return cos_poly(r);
    case 1: return -sin_poly(r);
    case 2: return -cos_poly(r);
    default: return sin_poly(r);
  }
}

}  // namespace elfvc
