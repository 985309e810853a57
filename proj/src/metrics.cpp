#include "elfvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "elfvc/dataio.hpp"
#include "elfvc/mathfn.hpp"

namespace elfvc {

double psnr_db(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("psnr: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  if (a.numel() == 0) throw std::invalid_argument("psnr: empty tensors");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * det_log10(mse);
}

// ------------------------------------------------------------------- hull ----

std::vector<RDPoint> consolidate_rd(const std::vector<RDPoint>& points) {
  if (points.empty()) throw std::invalid_argument("consolidate_rd: no points");
  for (const RDPoint& p : points) {
    if (!(p.bpp > 0.0)) {
      throw std::invalid_argument("consolidate_rd: bpp must be positive, got " +
                                  std::to_string(p.bpp));
    }
  }
  std::vector<RDPoint> pts = points;
  std::sort(pts.begin(), pts.end(), [](const RDPoint& a, const RDPoint& b) {
    if (a.bpp != b.bpp) return a.bpp < b.bpp;
    return a.psnr_db > b.psnr_db;
  });

  // Pareto pass: more rate must buy strictly more quality.
  std::vector<RDPoint> pareto;
  for (const RDPoint& p : pts) {
    if (pareto.empty() || p.psnr_db > pareto.back().psnr_db) {
      if (!pareto.empty() && p.bpp == pareto.back().bpp) continue;  // same rate, kept best
      pareto.push_back(p);
    }
  }

  // Upper envelope over (log10 bpp, quality); points strictly below a chord
  // are dropped, collinear points stay.
  std::vector<RDPoint> hull;
  auto lx = [](const RDPoint& p) { return det_log10(p.bpp); };
  for (const RDPoint& p : pareto) {
    while (hull.size() >= 2) {
      const RDPoint& a = hull[hull.size() - 2];
      const RDPoint& b = hull[hull.size() - 1];
      const double cross = (lx(b) - lx(a)) * (p.psnr_db - a.psnr_db) -
                           (lx(p) - lx(a)) * (b.psnr_db - a.psnr_db);
      if (cross > 0.0) {
        hull.pop_back();  // b strictly below chord a->p
      } else {
        break;
      }
    }
    hull.push_back(p);
  }
  return hull;
}

// ------------------------------------------------------------------ PCHIP ----

Pchip Pchip::fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("pchip: need >= 2 matched points");
  }
  const size_t n = xs.size();
  for (size_t i = 1; i < n; ++i) {
    if (!(xs[i] > xs[i - 1])) {
      throw std::invalid_argument("pchip: x must be strictly increasing");
    }
  }
  std::vector<double> h(n - 1), d(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) {
    h[i] = xs[i + 1] - xs[i];
    d[i] = (ys[i + 1] - ys[i]) / h[i];
  }
  std::vector<double> m(n, 0.0);
  if (n == 2) {
    m[0] = m[1] = d[0];
  } else {
    auto sign = [](double v) { return (v > 0.0) - (v < 0.0); };
    // Fritsch-Carlson interior slopes: weighted harmonic mean of the secants,
    // zero at local extrema.
    for (size_t i = 1; i + 1 < n; ++i) {
      if (d[i - 1] == 0.0 || d[i] == 0.0 || sign(d[i - 1]) != sign(d[i])) {
        m[i] = 0.0;
      } else {
        const double w1 = 2.0 * h[i] + h[i - 1];
        const double w2 = h[i] + 2.0 * h[i - 1];
        m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
      }
    }
    // One-sided three-point endpoint slopes with the standard monotonicity
    // guards.
    auto endpoint = [&](double h0, double h1, double d0, double d1) {
      double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
      if (sign(s) != sign(d0)) {
        s = 0.0;
      } else if (sign(d0) != sign(d1) && std::abs(s) > 3.0 * std::abs(d0)) {
        s = 3.0 * d0;
      }
      return s;
    };
    m[0] = endpoint(h[0], h[1], d[0], d[1]);
    m[n - 1] = endpoint(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  }
  Pchip out;
  out.x = xs;
  out.y = ys;
  out.slope = std::move(m);
  return out;
}

namespace {

// Monomial coefficients of the Hermite cubic on segment i in the local
// variable t = (x - x_i) / h, so p(t) = c0 + c1 t + c2 t^2 + c3 t^3.
struct Cubic {
  double c0, c1, c2, c3;
};

Cubic segment_cubic(const Pchip& p, size_t i) {
  const double h = p.x[i + 1] - p.x[i];
  const double y0 = p.y[i], y1 = p.y[i + 1];
  const double m0 = p.slope[i], m1 = p.slope[i + 1];
  Cubic c;
  c.c0 = y0;
  c.c1 = h * m0;
  c.c2 = 3.0 * (y1 - y0) - h * (2.0 * m0 + m1);
  c.c3 = 2.0 * (y0 - y1) + h * (m0 + m1);
  return c;
}

}  // namespace

double Pchip::eval(double at) const {
  if (at < x.front() || at > x.back()) {
    throw std::invalid_argument("pchip: evaluation outside the fitted range");
  }
  size_t i = static_cast<size_t>(
      std::upper_bound(x.begin(), x.end(), at) - x.begin());
  if (i > 0) --i;
  if (i >= x.size() - 1) i = x.size() - 2;
  const Cubic c = segment_cubic(*this, i);
  const double t = (at - x[i]) / (x[i + 1] - x[i]);
  return c.c0 + t * (c.c1 + t * (c.c2 + t * c.c3));
}

double Pchip::integrate(double a, double b) const {
  if (a > b) return -integrate(b, a);
  if (a < x.front() || b > x.back()) {
    throw std::invalid_argument("pchip: integration outside the fitted range");
  }
  double total = 0.0;
  for (size_t i = 0; i + 1 < x.size(); ++i) {
    const double lo = std::max(a, x[i]);
    const double hi = std::min(b, x[i + 1]);
    if (hi <= lo) continue;
    const double h = x[i + 1] - x[i];
    const Cubic c = segment_cubic(*this, i);
    auto anti = [&](double t) {
      return t * (c.c0 + t * (c.c1 / 2.0 + t * (c.c2 / 3.0 + t * c.c3 / 4.0)));
    };
    const double t0 = (lo - x[i]) / h;
    const double t1 = (hi - x[i]) / h;
    total += h * (anti(t1) - anti(t0));
  }
  return total;
}

// ---------------------------------------------------------------- BD-rate ----

namespace {

// Sorted, strictly-increasing-quality view of a curve for interpolation.
void curve_axes(const std::vector<RDPoint>& pts, std::vector<double>& q,
                std::vector<double>& logr, const char* which) {
  if (pts.size() < 4) {
    throw std::invalid_argument(std::string("bd_rate: ") + which +
                                " curve needs >= 4 points");
  }
  std::vector<RDPoint> s = pts;
  std::sort(s.begin(), s.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.psnr_db < b.psnr_db; });
  q.clear();
  logr.clear();
  for (const RDPoint& p : s) {
    if (!(p.bpp > 0.0) || !std::isfinite(p.psnr_db)) {
      throw std::invalid_argument(std::string("bd_rate: ") + which +
                                  " curve has non-finite or non-positive entries");
    }
    if (!q.empty() && !(p.psnr_db > q.back())) {
      throw std::invalid_argument(std::string("bd_rate: ") + which +
                                  " curve has duplicate quality values");
    }
    q.push_back(p.psnr_db);
    logr.push_back(det_log10(p.bpp));
  }
}

}  // namespace

double bd_rate_percent(const std::vector<RDPoint>& reference,
                       const std::vector<RDPoint>& test) {
  std::vector<double> qr, lr, qt, lt;
  curve_axes(reference, qr, lr, "reference");
  curve_axes(test, qt, lt, "test");
  const double qlo = std::max(qr.front(), qt.front());
  const double qhi = std::min(qr.back(), qt.back());
  if (!(qhi > qlo)) {
    throw std::invalid_argument("bd_rate: quality ranges do not overlap");
  }
  const Pchip ref = Pchip::fit(qr, lr);
  const Pchip tst = Pchip::fit(qt, lt);
  const double avg_diff =
      (tst.integrate(qlo, qhi) - ref.integrate(qlo, qhi)) / (qhi - qlo);
  return 100.0 * (det_pow10(avg_diff) - 1.0);
}

// -------------------------------------------------------------------- CSV ----

namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& s, int line) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("rd csv line " + std::to_string(line) + ": bad number '" +
                             s + "'");
  }
}

}  // namespace

std::string write_rd_csv(const std::vector<RDPoint>& points) {
  std::string out = "tag,level,bpp,psnr_db\n";
  for (const RDPoint& p : points) {
    if (p.tag.find(',') != std::string::npos || p.tag.find('\n') != std::string::npos) {
      throw std::invalid_argument("rd csv: tag may not contain ',' or newline");
    }
    out += p.tag + "," + fmt_double(p.level) + "," + fmt_double(p.bpp) + "," +
           fmt_double(p.psnr_db) + "\n";
  }
  return out;
}

std::vector<RDPoint> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "tag,level,bpp,psnr_db") {
    throw std::runtime_error("rd csv: missing 'tag,level,bpp,psnr_db' header");
  }
  std::vector<RDPoint> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    for (;;) {
      const size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 4) {
      throw std::runtime_error("rd csv line " + std::to_string(lineno) +
                               ": expected 4 cells, got " + std::to_string(cells.size()));
    }
    RDPoint p;
    p.tag = cells[0];
    p.level = parse_double(cells[1], lineno);
    p.bpp = parse_double(cells[2], lineno);
    p.psnr_db = parse_double(cells[3], lineno);
    out.push_back(std::move(p));
  }
  return out;
}

void save_rd_csv(const std::string& path, const std::vector<RDPoint>& points) {
  const std::string text = write_rd_csv(points);
  write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

std::vector<RDPoint> load_rd_csv(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  return parse_rd_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace elfvc
