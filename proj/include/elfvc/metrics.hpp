#pragma once

// Rate-distortion measurement and comparison: PSNR, R-D point tables (CSV),
// upper-hull consolidation, and BD-rate curve deltas.

#include <string>
#include <vector>

#include "elfvc/tensor.hpp"

namespace elfvc {

// 10*log10(1 / MSE) with peak 1.0; identical frames -> +inf (the lossless
// sentinel).  Throws std::invalid_argument on shape mismatch.
double psnr_db(const Tensor& a, const Tensor& b);

struct RDPoint {
  std::string tag;      // source label (model / run)
  double level = 0.0;   // rate-level knob that produced the point
  double bpp = 0.0;     // bits per pixel, > 0
  double psnr_db = 0.0; // quality; +inf marks lossless
};

// Upper concave envelope in (log10 bpp, PSNR): dominated points (no better
// quality for the extra rate) and points strictly below a hull chord are
// dropped; collinear points survive.  Output sorted by bpp.
std::vector<RDPoint> consolidate_rd(const std::vector<RDPoint>& points);

// Bjontegaard rate delta in percent: piecewise-cubic (monotone Hermite)
// interpolation of log10(bpp) over PSNR for both curves, averaged over the
// shared quality interval; 100*(10^avg_diff - 1).  Requires >= 4 points per
// curve and overlapping quality ranges, else std::invalid_argument.
double bd_rate_percent(const std::vector<RDPoint>& reference,
                       const std::vector<RDPoint>& test);

// CSV with the exact header `tag,level,bpp,psnr_db`; +-inf serialized as
// "inf"/"-inf".  read throws std::runtime_error on malformed input.
std::string write_rd_csv(const std::vector<RDPoint>& points);
std::vector<RDPoint> parse_rd_csv(const std::string& text);
void save_rd_csv(const std::string& path, const std::vector<RDPoint>& points);
std::vector<RDPoint> load_rd_csv(const std::string& path);

// Monotone piecewise-cubic interpolant (Fritsch-Carlson slopes, the classic
// shape-preserving choice), exposed for direct testing.  xs strictly
// increasing, >= 2 points.
struct Pchip {
  std::vector<double> x, y, slope;

  static Pchip fit(const std::vector<double>& xs, const std::vector<double>& ys);
  // Both reject arguments outside [x.front(), x.back()] (no extrapolation).
  double eval(double at) const;
  double integrate(double a, double b) const;   // exact segment-wise antiderivative
};

}  // namespace elfvc
