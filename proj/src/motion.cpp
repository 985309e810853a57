#include "elfvc/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "elfvc/mathfn.hpp"

namespace elfvc {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

std::vector<double> gauss_kernel(double sigma) {
  int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> w(static_cast<size_t>(2 * r + 1));
  double inv = 1.0 / (2.0 * sigma * sigma), sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    w[static_cast<size_t>(i + r)] = det_exp(-static_cast<double>(i) * i * inv);
    sum += w[static_cast<size_t>(i + r)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Horizontal then vertical 1D passes over one (H,W) plane.
void blur_plane(const double* in, double* out, int h, int w,
                const std::vector<double>& k, std::vector<double>& tmp) {
  const int r = static_cast<int>(k.size() / 2);
  tmp.resize(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * in[y * w + clampi(x + i, 0, w - 1)];
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(clampi(y + i, 0, h - 1)) * w + x];
      out[y * w + x] = acc;
    }
}

// Exact adjoint of blur_plane: scatter with the same clamped taps, passes in
// reverse order (vertical adjoint, then horizontal adjoint).
void blur_plane_adjoint(const double* gout, double* gin_add, int h, int w,
                        const std::vector<double>& k, std::vector<double>& tmp) {
  const int r = static_cast<int>(k.size() / 2);
  tmp.assign(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double g = gout[y * w + x];
      if (g == 0.0) continue;
      for (int i = -r; i <= r; ++i)
        tmp[static_cast<size_t>(clampi(y + i, 0, h - 1)) * w + x] += k[static_cast<size_t>(i + r)] * g;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double g = tmp[static_cast<size_t>(y) * w + x];
      if (g == 0.0) continue;
      for (int i = -r; i <= r; ++i)
        gin_add[y * w + clampi(x + i, 0, w - 1)] += k[static_cast<size_t>(i + r)] * g;
    }
}

struct WarpDims {
  int b, c, h, w;  // b == 0 for rank-3
  int samples() const { return b == 0 ? 1 : b; }
};

WarpDims warp_dims(const Tensor& img, const Tensor& flow) {
  check(img.rank() == 3 || img.rank() == 4,
        "scale_space_warp: image must be rank 3 or 4, got " + img.shape_str());
  check(flow.rank() == img.rank(), "scale_space_warp: image/flow rank mismatch");
  WarpDims d;
  d.b = img.rank() == 4 ? img.shape[0] : 0;
  d.c = img.shape[img.rank() - 3];
  d.h = img.shape[img.rank() - 2];
  d.w = img.shape[img.rank() - 1];
  int fb = flow.rank() == 4 ? flow.shape[0] : 0;
  check(fb == d.b && flow.shape[flow.rank() - 3] == 3 &&
            flow.shape[flow.rank() - 2] == d.h && flow.shape[flow.rank() - 1] == d.w,
        "scale_space_warp: flow must be (.,3," + std::to_string(d.h) + "," +
            std::to_string(d.w) + "), got " + flow.shape_str());
  return d;
}

}  // namespace

std::vector<double> scale_space_sigmas(const ScaleSpaceConfig& cfg) {
  check(cfg.levels >= 1, "scale_space_sigmas: need at least one level");
  check(cfg.sigma0 > 0.0, "scale_space_sigmas: sigma0 must be positive");
  std::vector<double> s(static_cast<size_t>(cfg.levels), 0.0);
  for (int i = 1; i < cfg.levels; ++i)
    s[static_cast<size_t>(i)] = cfg.sigma0 * static_cast<double>(1 << (i - 1));
  return s;
}

Tensor gaussian_blur_clamped(const Tensor& img, double sigma) {
  check(img.rank() >= 2, "gaussian_blur_clamped: need spatial dims");
  if (sigma == 0.0) return img;
  check(sigma > 0.0, "gaussian_blur_clamped: sigma must be >= 0");
  const int h = img.shape[img.rank() - 2], w = img.shape[img.rank() - 1];
  const int64_t planes = img.numel() / (static_cast<int64_t>(h) * w);
  std::vector<double> k = gauss_kernel(sigma);
  Tensor out = Tensor::zeros(img.shape);
  std::vector<double> tmp;
  for (int64_t p = 0; p < planes; ++p)
    blur_plane(img.data.data() + p * h * w, out.data.data() + p * h * w, h, w, k, tmp);
  return out;
}

std::vector<Tensor> scale_space_volume(const Tensor& frame, const ScaleSpaceConfig& cfg) {
  std::vector<double> sigmas = scale_space_sigmas(cfg);
  std::vector<Tensor> vol;
  vol.reserve(sigmas.size());
  for (double s : sigmas) vol.push_back(gaussian_blur_clamped(frame, s));
  return vol;
}

Var scale_space_warp(const Var& image, const Var& flow, const ScaleSpaceConfig& cfg) {
  const WarpDims d = warp_dims(image->value, flow->value);
  const int levels = cfg.levels;
  std::vector<Tensor> pyr = scale_space_volume(image->value, cfg);

  const int64_t plane = static_cast<int64_t>(d.h) * d.w;
  const int64_t img_stride = static_cast<int64_t>(d.c) * plane;   // per batch sample
  const int64_t flow_stride = 3 * plane;
  Tensor out = Tensor::zeros(image->value.shape);

  // Captures by value: the backward closure outlives this stack frame.
  auto geometry = [d, plane, levels](const double* fdata, int64_t pix, int& x0, int& x1,
                                     int& y0, int& y1, int& z0, int& z1, double& fx,
                                     double& fy, double& fz, bool& sig_interior) {
    const int y = static_cast<int>(pix / d.w), x = static_cast<int>(pix % d.w);
    const double sx = x + fdata[pix];
    const double sy = y + fdata[plane + pix];
    const double raw = fdata[2 * plane + pix];
    // Non-finite flow must not turn into indices (int casts of NaN are
    // undefined): sample cell (0,0,0) with NaN weights so the poison shows
    // up in the values, not as out-of-bounds reads.
    if (!std::isfinite(sx) || !std::isfinite(sy) || !std::isfinite(raw)) {
      x0 = x1 = y0 = y1 = z0 = z1 = 0;
      fx = fy = fz = std::numeric_limits<double>::quiet_NaN();
      sig_interior = false;
      return;
    }
    double sz = raw < 0.0 ? 0.0 : (raw > levels - 1 ? levels - 1 : raw);
    sig_interior = raw > 0.0 && raw < levels - 1;
    const double x0f = std::floor(sx), y0f = std::floor(sy);
    fx = sx - x0f;
    fy = sy - y0f;
    // floor() of a huge value does not fit an int; clamp in double first.
    const double xc = x0f < -1.0 ? -1.0 : (x0f > d.w ? static_cast<double>(d.w) : x0f);
    const double yc = y0f < -1.0 ? -1.0 : (y0f > d.h ? static_cast<double>(d.h) : y0f);
    x0 = clampi(static_cast<int>(xc), 0, d.w - 1);
    x1 = clampi(static_cast<int>(xc) + 1, 0, d.w - 1);
    y0 = clampi(static_cast<int>(yc), 0, d.h - 1);
    y1 = clampi(static_cast<int>(yc) + 1, 0, d.h - 1);
    if (x0f < -1.0 || x0f > d.w) fx = x0f < -1.0 ? 0.0 : 1.0;
    if (y0f < -1.0 || y0f > d.h) fy = y0f < -1.0 ? 0.0 : 1.0;
    z0 = static_cast<int>(sz);
    fz = sz - z0;
    z1 = std::min(z0 + 1, levels - 1);
  };

  for (int s = 0; s < d.samples(); ++s) {
    const double* fdata = flow->value.data.data() + static_cast<int64_t>(s) * flow_stride;
    for (int64_t pix = 0; pix < plane; ++pix) {
      int x0, x1, y0, y1, z0, z1;
      double fx, fy, fz;
      bool sig_interior;
      geometry(fdata, pix, x0, x1, y0, y1, z0, z1, fx, fy, fz, sig_interior);
      for (int c = 0; c < d.c; ++c) {
        const int64_t base = static_cast<int64_t>(s) * img_stride + static_cast<int64_t>(c) * plane;
        const double* p0 = pyr[static_cast<size_t>(z0)].data.data() + base;
        const double* p1 = pyr[static_cast<size_t>(z1)].data.data() + base;
        const double b0 = (1 - fy) * ((1 - fx) * p0[y0 * d.w + x0] + fx * p0[y0 * d.w + x1]) +
                          fy * ((1 - fx) * p0[y1 * d.w + x0] + fx * p0[y1 * d.w + x1]);
        const double b1 = (1 - fy) * ((1 - fx) * p1[y0 * d.w + x0] + fx * p1[y0 * d.w + x1]) +
                          fy * ((1 - fx) * p1[y1 * d.w + x0] + fx * p1[y1 * d.w + x1]);
        out.data[static_cast<size_t>(base + pix)] = (1 - fz) * b0 + fz * b1;
      }
    }
  }

  Var iv = image, fv = flow;
  std::vector<double> sigmas = scale_space_sigmas(cfg);
  return make_op("scale_space_warp", std::move(out), {image, flow},
                 [iv, fv, d, levels, plane, img_stride, flow_stride, geometry,
                  pyr = std::move(pyr), sigmas](Node& self) {
    const bool need_img = iv->requires_grad;
    const bool need_flow = fv->requires_grad;
    if (!need_img && !need_flow) return;
    std::vector<Tensor> gpyr;
    if (need_img)
      for (int l = 0; l < levels; ++l) gpyr.push_back(Tensor::zeros(iv->value.shape));
    for (int s = 0; s < d.samples(); ++s) {
      const double* fdata = fv->value.data.data() + static_cast<int64_t>(s) * flow_stride;
      double* gflow = need_flow
                          ? fv->grad_buf().data.data() + static_cast<int64_t>(s) * flow_stride
                          : nullptr;
      for (int64_t pix = 0; pix < plane; ++pix) {
        int x0, x1, y0, y1, z0, z1;
        double fx, fy, fz;
        bool sig_interior;
        geometry(fdata, pix, x0, x1, y0, y1, z0, z1, fx, fy, fz, sig_interior);
        for (int c = 0; c < d.c; ++c) {
          const int64_t base = static_cast<int64_t>(s) * img_stride + static_cast<int64_t>(c) * plane;
          const double g = self.grad.data[static_cast<size_t>(base + pix)];
          if (g == 0.0) continue;
          const double* p0 = pyr[static_cast<size_t>(z0)].data.data() + base;
          const double* p1 = pyr[static_cast<size_t>(z1)].data.data() + base;
          if (need_img) {
            double* g0 = gpyr[static_cast<size_t>(z0)].data.data() + base;
            double* g1 = gpyr[static_cast<size_t>(z1)].data.data() + base;
            const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
            const double w10 = fy * (1 - fx), w11 = fy * fx;
            g0[y0 * d.w + x0] += g * (1 - fz) * w00;
            g0[y0 * d.w + x1] += g * (1 - fz) * w01;
            g0[y1 * d.w + x0] += g * (1 - fz) * w10;
            g0[y1 * d.w + x1] += g * (1 - fz) * w11;
            g1[y0 * d.w + x0] += g * fz * w00;
            g1[y0 * d.w + x1] += g * fz * w01;
            g1[y1 * d.w + x0] += g * fz * w10;
            g1[y1 * d.w + x1] += g * fz * w11;
          }
          if (need_flow) {
            const double dx0 = (1 - fy) * (p0[y0 * d.w + x1] - p0[y0 * d.w + x0]) +
                               fy * (p0[y1 * d.w + x1] - p0[y1 * d.w + x0]);
            const double dx1 = (1 - fy) * (p1[y0 * d.w + x1] - p1[y0 * d.w + x0]) +
                               fy * (p1[y1 * d.w + x1] - p1[y1 * d.w + x0]);
            const double dy0 = (1 - fx) * (p0[y1 * d.w + x0] - p0[y0 * d.w + x0]) +
                               fx * (p0[y1 * d.w + x1] - p0[y0 * d.w + x1]);
            const double dy1 = (1 - fx) * (p1[y1 * d.w + x0] - p1[y0 * d.w + x0]) +
                               fx * (p1[y1 * d.w + x1] - p1[y0 * d.w + x1]);
            gflow[pix] += g * ((1 - fz) * dx0 + fz * dx1);
            gflow[plane + pix] += g * ((1 - fz) * dy0 + fz * dy1);
            if (sig_interior) {
              const double b0 = (1 - fy) * ((1 - fx) * p0[y0 * d.w + x0] + fx * p0[y0 * d.w + x1]) +
                                fy * ((1 - fx) * p0[y1 * d.w + x0] + fx * p0[y1 * d.w + x1]);
              const double b1 = (1 - fy) * ((1 - fx) * p1[y0 * d.w + x0] + fx * p1[y0 * d.w + x1]) +
                                fy * ((1 - fx) * p1[y1 * d.w + x0] + fx * p1[y1 * d.w + x1]);
              gflow[2 * plane + pix] += g * (b1 - b0);
            }
          }
        }
      }
    }
    if (need_img) {
      Tensor& gi = iv->grad_buf();
      const int64_t planes = gi.numel() / plane;
      std::vector<double> tmp;
      for (int l = 0; l < levels; ++l) {
        if (sigmas[static_cast<size_t>(l)] == 0.0) {
          for (int64_t i = 0; i < gi.numel(); ++i) gi.data[static_cast<size_t>(i)] += gpyr[static_cast<size_t>(l)].data[static_cast<size_t>(i)];
          continue;
        }
        std::vector<double> k = gauss_kernel(sigmas[static_cast<size_t>(l)]);
        for (int64_t p = 0; p < planes; ++p)
          blur_plane_adjoint(gpyr[static_cast<size_t>(l)].data.data() + p * plane,
                             gi.data.data() + p * plane, d.h, d.w, k, tmp);
      }
    }
  });
}

Var combine_flow(const Var& base, const Var& mask, const Var& delta) {
  const Tensor& m = mask->value;
  check(m.shape[m.rank() - 3] == 1, "combine_flow: mask must have one channel");
  check(base->value.shape[base->value.rank() - 3] == 3 &&
            delta->value.shape[delta->value.rank() - 3] == 3,
        "combine_flow: flows must have three channels");
  Var m3 = ops::concat_channels({mask, mask, mask});
  return m3 * base + delta;
}

// --------------------------------------------------------- flow predictor ----

FlowPredictor::FlowPredictor(ParamRegistry& reg, const std::string& prefix,
                             int level_channels, Rng& rng) {
  // 3 flow + 3 + 3 reconstruction channels, space-to-depth x4 -> 144.
  const int in4 = 9 * 16 + level_channels;
  DMBlockConfig c4{/*channels=*/16, /*inner=*/2, /*scale=*/4};
  DMBlockConfig c8{/*channels=*/16, /*inner=*/2, /*scale=*/8};
  path4_ = DMBlock(c4, in4, reg, prefix + ".path4", rng);
  down_ = make_conv(reg, prefix + ".down", 16, 16, 3, 2, rng);
  path8_ = DMBlock(c8, 16, reg, prefix + ".path8", rng);
  up_ = make_conv(reg, prefix + ".up", 16, 16, 3, 1, rng);
  fuse_ = make_conv(reg, prefix + ".fuse", 32, 16, 1, 1, rng);
  head_ = make_conv(reg, prefix + ".head", 16, 48, 3, 1, rng, /*gain=*/0.0);
}

Var FlowPredictor::operator()(const Var& prev_flow, const Var& recon_tm2,
                              const Var& recon_tm1, const Var& level) const {
  Var x = ops::concat_channels({prev_flow, recon_tm2, recon_tm1});
  Var x4 = attach_level_map(ops::space_to_depth(x, 4), level);
  const Tensor& t4 = x4->value;
  const int h4 = t4.shape[t4.rank() - 2], w4 = t4.shape[t4.rank() - 1];

  Var p4 = path4_(x4, 4);
  Var p8 = path8_(ops::leaky_relu(down_(p4)), 8);
  Var p8u = ops::leaky_relu(up_(ops::upsample_nearest2(p8, h4, w4)));
  Var fused = ops::leaky_relu(fuse_(ops::concat_channels({p4, p8u})));
  return ops::depth_to_space(head_(fused), 4);
}

int64_t FlowPredictor::param_count() const {
  return path4_.param_count() + path8_.param_count() + down_.param_count() +
         up_.param_count() + fuse_.param_count() + head_.param_count();
}

}  // namespace elfvc
